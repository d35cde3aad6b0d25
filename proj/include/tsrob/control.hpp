#pragma once

// Closed-form robustness and representability analysis: the exact linear
// input->forecast map H of a linearized single-encoder-layer model and its
// H1*H2 factorization, worst-case sensitivity (sigma_max, optimal unit
// perturbation, norm bounds), spectral radii, encoder transmission zeros,
// and the Kalman/Riccati/controllability oracles.

#include <complex>
#include <stdexcept>

#include "tsrob/linalg.hpp"
#include "tsrob/model.hpp"
#include "tsrob/ssm.hpp"

namespace tsrob {

struct NotLinearized : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotObservable : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct Unstable : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
    std::size_t iterations;
    NoConvergence(const std::string& what, std::size_t iters)
        : std::runtime_error(what + " (after " + std::to_string(iters) + " iterations)"),
          iterations(iters) {}
};

// ----------------------------------------------------------------------------
// Aggregate SISO encoder of a linearized model
// ----------------------------------------------------------------------------
// With identity MLPs, no skips and zero biases, the parallel per-channel cells
// of the single encoder layer combine with the embedding and projection gains
// into one SISO triple: A = blockdiag(A_c), B = stack(w_c b), C = [p_c c_c].
// The encoded sequence reads the post-update state, so e_k = sum_{j<=k}
// C A^{k-j} B u_j with A^0 = I.

struct SisoEncoder {
    Mat a;  // n x n (n = channels * order; n = 0 for a pass-through encoder)
    Vec b;  // n
    Vec c;  // n
    double feedthrough_gain = 1.0;  // pass-through gain when n == 0
};

inline SisoEncoder encoder_aggregate(const SpacetimeModel& m) {
    if (!is_linearized(m)) throw NotLinearized("model has active MLPs, skips or biases");
    if (m.encoder.size() > 1)
        throw NotLinearized("closed form covers a single encoder layer only");
    SisoEncoder enc;
    if (m.encoder.empty()) {
        enc.feedthrough_gain = m.embed_w.size() == 1 ? m.embed_w[0] * m.proj_w[0] : 0.0;
        return enc;
    }
    const auto& layer = m.encoder[0];
    const std::size_t d = layer.ssm_bank.size();
    const std::size_t n = layer.ssm_bank.empty() ? 0 : layer.ssm_bank[0].order;
    enc.a = Mat(d * n, d * n);
    enc.b.assign(d * n, 0.0);
    enc.c.assign(d * n, 0.0);
    for (std::size_t ch = 0; ch < d; ++ch) {
        const auto& cell = layer.ssm_bank[ch];
        const std::size_t off = ch * n;
        for (std::size_t i = 0; i + 1 < n; ++i) enc.a(off + i, off + i + 1) = 1.0;
        for (std::size_t j = 0; j < n; ++j) enc.a(off + n - 1, off + j) = cell.a_coeffs[j];
        enc.b[off + n - 1] = m.embed_w[ch];
        for (std::size_t j = 0; j < n; ++j) enc.c[off + j] = m.proj_w[ch] * cell.c[j];
    }
    return enc;
}

// Markov parameters m_t = C A^t B of the aggregate encoder (m_0 = C B, or the
// pass-through gain when the encoder has no state).
inline Vec encoder_markov(const SisoEncoder& enc, std::size_t count) {
    Vec m(count, 0.0);
    if (enc.a.rows == 0) {
        if (count > 0) m[0] = enc.feedthrough_gain;
        return m;
    }
    Vec v = enc.b;
    for (std::size_t t = 0; t < count; ++t) {
        m[t] = dot(enc.c, v);
        v = matvec(enc.a, v);
    }
    return m;
}

// ----------------------------------------------------------------------------
// Transfer map
// ----------------------------------------------------------------------------

struct TransferMap {
    Mat h;   // horizon x lookback
    Mat h1;  // horizon x n_d   (rows Cbar (Abar + Bbar Kbar)^i)
    Mat h2;  // n_d x lookback  (columns sum_k Abar^{l-1-k} Bbar m_{k-j})
    SisoEncoder encoder;
    Mat dec_a;       // decoder open-loop companion matrix
    Mat dec_closed;  // Abar + Bbar Kbar
    Vec dec_c;
    Vec dec_k;
};

inline TransferMap build_transfer_map(const SpacetimeModel& model) {
    if (!is_linearized(model)) throw NotLinearized("build_transfer_map requires a linearized model");
    const std::size_t l = model.cfg.lookback;
    const std::size_t h = model.cfg.horizon;
    const std::size_t nd = model.decoder.order;

    TransferMap tm;
    tm.encoder = encoder_aggregate(model);
    CompanionSSM dec(nd);
    dec.a_coeffs = model.decoder.a_coeffs;
    tm.dec_a = dec.dense_a();
    tm.dec_c = model.decoder.c_forecast;
    tm.dec_k = model.decoder.k_feedback;
    // companion structure: Abar + b k' adds k to the coefficient row
    tm.dec_closed = tm.dec_a;
    for (std::size_t j = 0; j < nd; ++j) tm.dec_closed(nd - 1, j) += tm.dec_k[j];

    const Vec markov = encoder_markov(tm.encoder, l);

    // H2 columns: v_r = sum_{t=0}^{r} Abar^{r-t} Bbar m_t with column j = v_{l-1-j},
    // via the recursion v_0 = Bbar m_0, v_r = Abar v_{r-1} + Bbar m_r.
    tm.h2 = Mat(nd, l);
    Vec v(nd, 0.0);
    for (std::size_t r = 0; r < l; ++r) {
        v = matvec(tm.dec_a, v);
        v[nd - 1] += markov[r];
        for (std::size_t i = 0; i < nd; ++i) tm.h2(i, l - 1 - r) = v[i];
    }

    // H1 rows: row_i = Cbar (Abar + Bbar Kbar)^i
    tm.h1 = Mat(h, nd);
    Vec row = tm.dec_c;
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < nd; ++j) tm.h1(i, j) = row[j];
        row = matvec_t(tm.dec_closed, row);
    }

    tm.h = Mat(h, l);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < l; ++j) {
            double s = 0.0;
            for (std::size_t q = 0; q < nd; ++q) s += tm.h1(i, q) * tm.h2(q, j);
            tm.h(i, j) = s;
        }
    return tm;
}

// ----------------------------------------------------------------------------
// Sensitivity report
// ----------------------------------------------------------------------------

struct SensitivityReport {
    double sigma_max = 0.0;
    Vec eps_star;        // unit right singular vector (tie rule: lowest basis index)
    double l1_norm = 0.0;
    double l1_lower = 0.0;   // (1/sqrt(h)) ||H||_1
    double l1_upper = 0.0;   // sqrt(l) ||H||_1
    double dim_bound = 0.0;  // ||H1||_2 sqrt(n_d) ||H2||_inf
    double rho_encoder = 0.0;
    double rho_decoder_open = 0.0;
    double rho_decoder_closed = 0.0;
    std::vector<double> encoder_zero_magnitudes;  // descending
};

// Transmission zeros of the aggregate encoder: roots of the numerator of
// c (zI - A)^{-1} b, computed from the Faddeev-LeVerrier adjugate expansion.
// (The cell's one-step output advance adds a structural zero at the origin,
// which is not reported.) When c.b != 0 this agrees with the nonzero
// eigenvalues of (I - b (cb)^{-1} c) A.
inline std::vector<std::complex<double>> encoder_zeros(const SisoEncoder& enc) {
    if (enc.a.rows == 0) return {};
    const CharPoly cp = faddeev_leverrier(enc.a);
    Vec numer(enc.a.rows, 0.0);  // coefficient of z^k is c M_k b
    for (std::size_t k = 0; k < enc.a.rows; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < enc.a.rows; ++i)
            for (std::size_t j = 0; j < enc.a.rows; ++j)
                s += enc.c[i] * cp.adj_coeffs[k](i, j) * enc.b[j];
        numer[k] = s;
    }
    return poly_roots(numer);
}

inline SensitivityReport sensitivity(const TransferMap& tm) {
    SensitivityReport rep;
    const std::size_t l = tm.h.cols, h = tm.h.rows, nd = tm.h1.cols;

    const SpectralResult sr = spectral_norm(tm.h, 1e-13);
    rep.sigma_max = sr.sigma;
    rep.eps_star = sr.right_vector;
    // tie rule: if a canonical basis vector attains sigma_max, pick the lowest index
    for (std::size_t j = 0; j < l; ++j) {
        Vec e(l, 0.0);
        e[j] = 1.0;
        if (norm2(matvec(tm.h, e)) >= rep.sigma_max * (1.0 - 1e-12)) {
            rep.eps_star = e;
            break;
        }
    }

    rep.l1_norm = matrix_norm1(tm.h);
    rep.l1_lower = rep.l1_norm / std::sqrt(static_cast<double>(h));
    rep.l1_upper = rep.l1_norm * std::sqrt(static_cast<double>(l));
    rep.dim_bound = spectral_norm(tm.h1, 1e-13).sigma * std::sqrt(static_cast<double>(nd)) *
                    matrix_norm_inf(tm.h2);
    rep.rho_encoder = tm.encoder.a.rows ? spectral_radius(tm.encoder.a) : 0.0;
    rep.rho_decoder_open = spectral_radius(tm.dec_a);
    rep.rho_decoder_closed = spectral_radius(tm.dec_closed);
    for (const auto& z : encoder_zeros(tm.encoder))
        rep.encoder_zero_magnitudes.push_back(std::abs(z));
    std::sort(rep.encoder_zero_magnitudes.rbegin(), rep.encoder_zero_magnitudes.rend());
    return rep;
}

// ----------------------------------------------------------------------------
// LTI systems, Kalman gain, controllability, observer simulation
// ----------------------------------------------------------------------------

struct LTISystem {
    Mat a;        // p x p
    Vec c;        // output row, length p
    Mat sigma_w;  // process noise covariance, p x p PSD
    double sigma_v = 0.0;  // measurement noise variance (> 0 for Kalman design)
};

struct ControllabilityResult {
    bool controllable = false;
    std::size_t rank = 0;
    bool pbh_consistent = true;
};

// Rank of [B, AB, ..., A^{p-1}B] with a relative tolerance, cross-checked by
// the PBH test on every eigenvalue of A.
inline ControllabilityResult controllability_check(const Mat& a, const Mat& b,
                                                   double rel_tol = 1e-10) {
    const std::size_t p = a.rows;
    Mat ctrb(p, p * b.cols);
    Mat cur = b;
    for (std::size_t k = 0; k < p; ++k) {
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < b.cols; ++j) ctrb(i, k * b.cols + j) = cur(i, j);
        cur = matmul(a, cur);
    }
    ControllabilityResult res;
    res.rank = rank(ctrb, rel_tol);
    res.controllable = (res.rank == p);

    // PBH: rank [lambda I - A, B] < p for some eigenvalue <=> uncontrollable
    bool pbh_controllable = true;
    using Cx = std::complex<double>;
    for (const auto& lambda : eigenvalues(a)) {
        std::vector<std::vector<Cx>> m(p, std::vector<Cx>(p + b.cols));
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < p; ++j)
                m[i][j] = (i == j ? lambda : Cx(0.0)) - Cx(a(i, j));
            for (std::size_t j = 0; j < b.cols; ++j) m[i][p + j] = Cx(b(i, j));
        }
        if (rank_qr<Cx>(std::move(m), rel_tol) < p) {
            pbh_controllable = false;
            break;
        }
    }
    res.pbh_consistent = (pbh_controllable == res.controllable);
    return res;
}

inline ControllabilityResult controllability_check(const Mat& a, const Vec& b,
                                                   double rel_tol = 1e-10) {
    Mat bm(b.size(), 1);
    for (std::size_t i = 0; i < b.size(); ++i) bm(i, 0) = b[i];
    return controllability_check(a, bm, rel_tol);
}

struct KalmanResult {
    Vec gain;          // predictor gain L
    Mat covariance;    // steady-state P
    double residual = 0.0;  // ||P - f(P)||_F at convergence
    std::size_t iterations = 0;
};

// Steady-state predictor Riccati equation by fixed-point iteration:
//   P <- A P A' + Sigma_w - A P C' (C P C' + Sigma_v)^{-1} C P A'
//   L  = A P C' (C P C' + Sigma_v)^{-1}
// Requires (A, C) observable and Sigma_v > 0. A must not be strictly unstable
// (rho(A) <= 1 + 1e-8); marginally stable systems are admitted and guarded by
// the convergence check.
inline KalmanResult kalman_gain(const LTISystem& sys, double tol = 1e-13,
                                std::size_t max_iters = 2000000) {
    const std::size_t p = sys.a.rows;
    if (sys.sigma_v <= 0.0) throw std::invalid_argument("kalman_gain: Sigma_v must be > 0");
    // observability of (A, C) == controllability of (A', C')
    {
        Mat at = sys.a.transposed();
        if (!controllability_check(at, sys.c).controllable)
            throw NotObservable("(A, C) is not observable");
    }
    if (spectral_radius(sys.a) > 1.0 + 1e-8)
        throw Unstable("rho(A) > 1: steady-state predictor does not exist");

    Mat pcur = Mat::identity(p);
    auto iterate = [&](const Mat& pm) {
        // s = C P C' + sigma_v ; apc = A P C'
        Vec pc = matvec(pm, sys.c);
        const double s = dot(sys.c, pc) + sys.sigma_v;
        Vec apc = matvec(sys.a, pc);
        Mat ap = matmul(sys.a, pm);
        Mat apa = matmul(ap, sys.a.transposed());
        Mat next = add(apa, sys.sigma_w);
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < p; ++j) next(i, j) -= apc[i] * apc[j] / s;
        return next;
    };

    KalmanResult res;
    for (std::size_t it = 0; it < max_iters; ++it) {
        Mat pn = iterate(pcur);
        const double d = max_abs(sub(pn, pcur));
        pcur = std::move(pn);
        res.iterations = it + 1;
        if (d <= tol * std::max(1.0, max_abs(pcur))) break;
        if (it + 1 == max_iters)
            throw NoConvergence("kalman_gain: Riccati fixed point did not converge", max_iters);
    }
    res.residual = frobenius(sub(iterate(pcur), pcur));
    Vec pc = matvec(pcur, sys.c);
    const double s = dot(sys.c, pc) + sys.sigma_v;
    res.gain = scaled(matvec(sys.a, pc), 1.0 / s);
    res.covariance = std::move(pcur);
    return res;
}

// Luenberger observer recursion: xhat_{k+1} = A xhat_k + L (y_k - C xhat_k),
// output[k] = C xhat_{k+1} (the prediction of y_{k+1} made at time k).
inline Vec simulate_observer(const LTISystem& sys, const Vec& l_gain, const Vec& y_stream,
                             Vec x0 = {}) {
    const std::size_t p = sys.a.rows;
    Vec x = x0.empty() ? Vec(p, 0.0) : std::move(x0);
    Vec out(y_stream.size());
    for (std::size_t k = 0; k < y_stream.size(); ++k) {
        const double innov = y_stream[k] - dot(sys.c, x);
        Vec ax = matvec(sys.a, x);
        for (std::size_t i = 0; i < p; ++i) x[i] = ax[i] + l_gain[i] * innov;
        out[k] = dot(sys.c, x);
    }
    return out;
}

// AR(p) process in the paper's top-companion realization:
// A = [[phi_1..phi_p],[I_{p-1} 0]], C = e_1'.
inline LTISystem ar_system(const Vec& phi, double sigma_w_scalar, double sigma_v) {
    const std::size_t p = phi.size();
    LTISystem sys;
    sys.a = Mat(p, p);
    for (std::size_t j = 0; j < p; ++j) sys.a(0, j) = phi[j];
    for (std::size_t i = 1; i < p; ++i) sys.a(i, i - 1) = 1.0;
    sys.c.assign(p, 0.0);
    sys.c[0] = 1.0;
    sys.sigma_w = scaled(Mat::identity(p), sigma_w_scalar);
    sys.sigma_v = sigma_v;
    return sys;
}

} // namespace tsrob
