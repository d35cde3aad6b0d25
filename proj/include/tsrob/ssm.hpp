#pragma once

// SISO state-space cell in controllable canonical form: ones on the
// superdiagonal, trainable coefficient row at the bottom, input vector
// fixed to the last canonical basis vector. The pair (A, b) is controllable
// by construction for any coefficient row.

#include <complex>
#include <random>
#include <stdexcept>

#include "tsrob/linalg.hpp"

namespace tsrob {

struct NotControllable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CompanionSSM {
    std::size_t order = 0;
    Vec a_coeffs;  // bottom row of A, length = order
    Vec c;         // output row, length = order
    Vec state;     // current state; reset to zero before each window unless carried

    CompanionSSM() = default;
    explicit CompanionSSM(std::size_t n) : order(n), a_coeffs(n, 0.0), c(n, 0.0), state(n, 0.0) {}

    void reset_state() { state.assign(order, 0.0); }

    // x <- A x + b u  with the companion structure (b = e_{n-1})
    static void step_state(Vec& x, const Vec& a, double u) {
        const std::size_t n = x.size();
        double last = 0.0;
        for (std::size_t j = 0; j < n; ++j) last += a[j] * x[j];
        for (std::size_t j = 0; j + 1 < n; ++j) x[j] = x[j + 1];
        x[n - 1] = last + u;
    }

    // lambda <- A' lambda  (adjoint propagation for the companion structure)
    static void step_adjoint(Vec& lam, const Vec& a) {
        const std::size_t n = lam.size();
        const double lam_last = lam[n - 1];
        for (std::size_t j = n; j-- > 1;) lam[j] = lam[j - 1] + a[j] * lam_last;
        lam[0] = a[0] * lam_last;
    }

    Mat dense_a() const {
        Mat a(order, order);
        for (std::size_t i = 0; i + 1 < order; ++i) a(i, i + 1) = 1.0;
        for (std::size_t j = 0; j < order; ++j) a(order - 1, j) = a_coeffs[j];
        return a;
    }

    Vec dense_b() const {
        Vec b(order, 0.0);
        if (order > 0) b[order - 1] = 1.0;
        return b;
    }

    double spectral_radius_a() const { return tsrob::spectral_radius(dense_a()); }
};

// y_t = c . x_t read before the state update (strictly causal): the output at
// step t depends on u_0..u_{t-1} only.
inline Vec ssm_scan(CompanionSSM& cell, const Vec& u) {
    Vec y(u.size());
    for (std::size_t t = 0; t < u.size(); ++t) {
        y[t] = dot(cell.c, cell.state);
        CompanionSSM::step_state(cell.state, cell.a_coeffs, u[t]);
    }
    return y;
}

// y_t = c . x_{t+1} read after the state update: the output at step t includes
// the instantaneous effect of u_t (one-step-ahead predictor read).
inline Vec ssm_scan_post(CompanionSSM& cell, const Vec& u) {
    Vec y(u.size());
    for (std::size_t t = 0; t < u.size(); ++t) {
        CompanionSSM::step_state(cell.state, cell.a_coeffs, u[t]);
        y[t] = dot(cell.c, cell.state);
    }
    return y;
}

// Coefficient row whose characteristic polynomial has the given roots
// (complex roots must appear in conjugate pairs). chi(z) = z^n - sum a_j z^j.
inline Vec companion_coeffs_from_roots(const std::vector<std::complex<double>>& roots) {
    std::vector<std::complex<double>> poly = { 1.0 };
    for (const auto& r : roots) {
        std::vector<std::complex<double>> np(poly.size() + 1, 0.0);
        for (std::size_t i = 0; i < poly.size(); ++i) {
            np[i] += poly[i];
            np[i + 1] -= poly[i] * r;
        }
        poly = np;
    }
    // poly is descending from the leading z^n term
    const std::size_t n = roots.size();
    Vec a(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto coef = poly[n - j];  // coefficient of z^j
        a[j] = -coef.real();
    }
    return a;
}

// Similarity transform of a controllable SISO pair into companion form.
// Given x' = F x + g u, y = c x, returns the equivalent (a_coeffs, c_new)
// with the canonical input vector. Throws NotControllable when the
// controllability matrix of (F, g) is rank deficient.
struct CompanionRealization {
    Vec a_coeffs;
    Vec c;
    Mat transform;  // T with T F T^{-1} companion, T g = e_{n-1}
};

inline CompanionRealization to_companion(const Mat& f, const Vec& g, const Vec& c_row,
                                         double rank_tol = 1e-10) {
    const std::size_t n = f.rows;
    if (f.cols != n || g.size() != n || c_row.size() != n)
        throw LinalgError("to_companion: dimension mismatch");
    // controllability matrix of (F, g)
    Mat wf(n, n);
    Vec col = g;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) wf(i, j) = col[i];
        col = matvec(f, col);
    }
    if (rank(wf, rank_tol) < n)
        throw NotControllable("pair (F, g) is not controllable; companion form does not exist");

    const CharPoly cp = faddeev_leverrier(f);
    CompanionRealization out;
    out.a_coeffs.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) out.a_coeffs[j] = -cp.coeffs_ascending[j];

    CompanionSSM canon(n);
    canon.a_coeffs = out.a_coeffs;
    Mat ac = canon.dense_a();
    Mat wc(n, n);
    col = canon.dense_b();
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) wc(i, j) = col[i];
        col = matvec(ac, col);
    }
    // T = Wc Wf^{-1}; solve T Wf = Wc  <=>  Wf' T' = Wc'
    Mat t_t = lu_solve(wf.transposed(), wc.transposed());
    out.transform = t_t.transposed();
    // c_new = c T^{-1}  <=>  T' c_new' = c'
    Mat crhs(n, 1);
    for (std::size_t i = 0; i < n; ++i) crhs(i, 0) = c_row[i];
    Mat cn = lu_solve(out.transform.transposed(), crhs);
    out.c.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) out.c[i] = cn(i, 0);
    return out;
}

} // namespace tsrob
