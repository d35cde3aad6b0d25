#pragma once

// Dense linear algebra for small matrices (orders <= ~64): LU solves,
// rank via column-pivoted QR, eigenvalues via Hessenberg reduction +
// shifted QR, spectral norm via power iteration, characteristic /
// adjugate polynomials via Faddeev-LeVerrier.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsrob {

using Vec = std::vector<double>;

struct LinalgError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ----------------------------------------------------------------------------
// Vector helpers
// ----------------------------------------------------------------------------

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double norm1(const Vec& a) {
    double s = 0.0;
    for (double x : a) s += std::abs(x);
    return s;
}

inline Vec axpy(double alpha, const Vec& x, const Vec& y) {
    Vec r(y);
    for (std::size_t i = 0; i < x.size(); ++i) r[i] += alpha * x[i];
    return r;
}

inline Vec scaled(const Vec& x, double alpha) {
    Vec r(x);
    for (double& v : r) v *= alpha;
    return r;
}

inline bool all_finite(const Vec& x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

// ----------------------------------------------------------------------------
// Dense row-major matrix
// ----------------------------------------------------------------------------

struct Mat {
    std::size_t rows = 0, cols = 0;
    Vec data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    Mat transposed() const {
        Mat t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }
};

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw LinalgError("matmul: dimension mismatch");
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Vec matvec(const Mat& a, const Vec& x) {
    if (a.cols != x.size()) throw LinalgError("matvec: dimension mismatch");
    Vec y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

inline Vec matvec_t(const Mat& a, const Vec& x) {
    if (a.rows != x.size()) throw LinalgError("matvec_t: dimension mismatch");
    Vec y(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) y[j] += a(i, j) * x[i];
    return y;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat c(a);
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Mat sub(const Mat& a, const Mat& b) {
    Mat c(a);
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Mat scaled(const Mat& a, double alpha) {
    Mat c(a);
    for (double& v : c.data) v *= alpha;
    return c;
}

inline double max_abs(const Mat& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

// max column absolute sum
inline double matrix_norm1(const Mat& a) {
    double best = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

// max row absolute sum
inline double matrix_norm_inf(const Mat& a) {
    double best = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

inline double frobenius(const Mat& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

// ----------------------------------------------------------------------------
// LU solve with partial pivoting
// ----------------------------------------------------------------------------

// Solves A X = B in place; returns X. Throws on singular A.
inline Mat lu_solve(Mat a, Mat b) {
    if (a.rows != a.cols || a.rows != b.rows) throw LinalgError("lu_solve: dimension mismatch");
    const std::size_t n = a.rows;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        double best = std::abs(a(k, k));
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > best) { best = std::abs(a(i, k)); piv = i; }
        if (best < std::numeric_limits<double>::min() * 4)
            throw LinalgError("lu_solve: singular matrix");
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
            for (std::size_t j = 0; j < b.cols; ++j) std::swap(b(k, j), b(piv, j));
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a(i, k) / a(k, k);
            if (f == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
            for (std::size_t j = 0; j < b.cols; ++j) b(i, j) -= f * b(k, j);
        }
    }
    for (std::size_t ki = n; ki-- > 0;) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = b(ki, j);
            for (std::size_t m = ki + 1; m < n; ++m) s -= a(ki, m) * b(m, j);
            b(ki, j) = s / a(ki, ki);
        }
    }
    return b;
}

inline Mat inverse(const Mat& a) { return lu_solve(a, Mat::identity(a.rows)); }

// ----------------------------------------------------------------------------
// Rank via column-pivoted QR (Householder), real or complex scalars
// ----------------------------------------------------------------------------

template <class Scalar>
std::size_t rank_qr(std::vector<std::vector<Scalar>> a, double rel_tol = 1e-10) {
    const std::size_t m = a.size();
    if (m == 0) return 0;
    const std::size_t n = a[0].size();
    const std::size_t kmax = std::min(m, n);
    std::vector<double> colnorm(n);
    auto recompute = [&](std::size_t j, std::size_t from) {
        double s = 0.0;
        for (std::size_t i = from; i < m; ++i) s += std::norm(std::complex<double>(a[i][j]));
        colnorm[j] = s;
    };
    for (std::size_t j = 0; j < n; ++j) recompute(j, 0);

    double first_pivot = 0.0;
    std::size_t rank = 0;
    for (std::size_t k = 0; k < kmax; ++k) {
        std::size_t piv = k;
        for (std::size_t j = k + 1; j < n; ++j)
            if (colnorm[j] > colnorm[piv]) piv = j;
        if (piv != k) {
            for (std::size_t i = 0; i < m; ++i) std::swap(a[i][k], a[i][piv]);
            std::swap(colnorm[k], colnorm[piv]);
        }
        double nrm = std::sqrt(std::max(0.0, colnorm[k]));
        if (k == 0) first_pivot = nrm;
        if (nrm <= rel_tol * std::max(first_pivot, std::numeric_limits<double>::min())) break;
        ++rank;
        // Householder vector for column k
        std::vector<Scalar> v(m - k);
        for (std::size_t i = k; i < m; ++i) v[i - k] = a[i][k];
        double vn = 0.0;
        for (auto& x : v) vn += std::norm(std::complex<double>(x));
        vn = std::sqrt(vn);
        if (vn == 0.0) continue;
        Scalar alpha;
        if constexpr (std::is_same_v<Scalar, double>) {
            alpha = (v[0] >= 0 ? -vn : vn);
        } else {
            std::complex<double> v0(v[0]);
            alpha = (std::abs(v0) == 0.0) ? Scalar(-vn) : Scalar(-vn * v0 / std::abs(v0));
        }
        v[0] -= alpha;
        double vsq = 0.0;
        for (auto& x : v) vsq += std::norm(std::complex<double>(x));
        if (vsq == 0.0) continue;
        for (std::size_t j = k; j < n; ++j) {
            Scalar s{};
            for (std::size_t i = k; i < m; ++i) {
                if constexpr (std::is_same_v<Scalar, double>) s += v[i - k] * a[i][j];
                else s += std::conj(v[i - k]) * a[i][j];
            }
            s = s * Scalar(2.0 / vsq);
            for (std::size_t i = k; i < m; ++i) a[i][j] -= v[i - k] * s;
        }
        for (std::size_t j = k + 1; j < n; ++j) recompute(j, k + 1);
    }
    return rank;
}

inline std::size_t rank(const Mat& a, double rel_tol = 1e-10) {
    std::vector<std::vector<double>> rows(a.rows, std::vector<double>(a.cols));
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) rows[i][j] = a(i, j);
    return rank_qr<double>(std::move(rows), rel_tol);
}

// ----------------------------------------------------------------------------
// Eigenvalues: Hessenberg reduction + shifted QR (Francis double shift)
// ----------------------------------------------------------------------------

namespace detail {

inline void hessenberg(Mat& a) {
    const std::size_t n = a.rows;
    if (n < 3) return;
    for (std::size_t k = 0; k + 2 < n; ++k) {
        double xn = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) xn += a(i, k) * a(i, k);
        xn = std::sqrt(xn);
        if (xn == 0.0) continue;
        Vec v(n, 0.0);
        double alpha = (a(k + 1, k) >= 0 ? -xn : xn);
        for (std::size_t i = k + 1; i < n; ++i) v[i] = a(i, k);
        v[k + 1] -= alpha;
        double vsq = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) vsq += v[i] * v[i];
        if (vsq == 0.0) continue;
        // A <- (I - 2vv'/v'v) A
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = k + 1; i < n; ++i) s += v[i] * a(i, j);
            s *= 2.0 / vsq;
            for (std::size_t i = k + 1; i < n; ++i) a(i, j) -= v[i] * s;
        }
        // A <- A (I - 2vv'/v'v)
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) s += a(i, j) * v[j];
            s *= 2.0 / vsq;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= s * v[j];
        }
    }
}

inline void eig2x2(double a, double b, double c, double d,
                   std::complex<double>& l1, std::complex<double>& l2) {
    const double tr = a + d;
    const double det = a * d - b * c;
    const double disc = tr * tr / 4.0 - det;
    if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        l1 = tr / 2.0 + sq;
        l2 = tr / 2.0 - sq;
    } else {
        const double sq = std::sqrt(-disc);
        l1 = { tr / 2.0, sq };
        l2 = { tr / 2.0, -sq };
    }
}

} // namespace detail

// Eigenvalues of a real dense matrix. Intended for small orders (<= 64).
inline std::vector<std::complex<double>> eigenvalues(Mat a, double tol = 1e-12) {
    if (a.rows != a.cols) throw LinalgError("eigenvalues: matrix not square");
    const std::size_t n0 = a.rows;
    std::vector<std::complex<double>> out;
    out.reserve(n0);
    if (n0 == 0) return out;
    detail::hessenberg(a);

    std::size_t hi = n0;  // active block is rows/cols [0, hi)
    std::size_t iter_since_deflate = 0;
    const std::size_t max_total = 80 * n0 + 200;
    std::size_t total = 0;

    auto subdiag_negligible = [&](std::size_t i) {
        const double s = std::abs(a(i - 1, i - 1)) + std::abs(a(i, i));
        return std::abs(a(i, i - 1)) <= tol * std::max(s, 1e-300);
    };

    while (hi > 0) {
        if (hi == 1) { out.emplace_back(a(0, 0), 0.0); break; }
        // deflate converged trailing blocks
        if (subdiag_negligible(hi - 1)) {
            out.emplace_back(a(hi - 1, hi - 1), 0.0);
            --hi;
            iter_since_deflate = 0;
            continue;
        }
        if (hi >= 2 && (hi == 2 || subdiag_negligible(hi - 2))) {
            std::complex<double> l1, l2;
            detail::eig2x2(a(hi - 2, hi - 2), a(hi - 2, hi - 1), a(hi - 1, hi - 2), a(hi - 1, hi - 1), l1, l2);
            out.push_back(l1);
            out.push_back(l2);
            hi -= 2;
            iter_since_deflate = 0;
            continue;
        }
        if (++total > max_total) throw LinalgError("eigenvalues: QR iteration failed to converge");

        // find start of the active unreduced block
        std::size_t lo = hi - 1;
        while (lo > 0 && !subdiag_negligible(lo)) --lo;

        // Francis double-shift on block [lo, hi)
        const std::size_t m = hi - 1;
        double s = a(m - 1, m - 1) + a(m, m);
        double t = a(m - 1, m - 1) * a(m, m) - a(m - 1, m) * a(m, m - 1);
        if (++iter_since_deflate % 12 == 0) {
            // exceptional shift to break cycles
            const double w = std::abs(a(m, m - 1)) + std::abs(a(m - 1, m - 2 >= lo ? m - 2 : lo));
            s = 2.0 * w * 0.75;
            t = w * w * (-0.4375);
        }
        double x = a(lo, lo) * a(lo, lo) + a(lo, lo + 1) * a(lo + 1, lo) - s * a(lo, lo) + t;
        double y = a(lo + 1, lo) * (a(lo, lo) + a(lo + 1, lo + 1) - s);
        double z = (lo + 2 < hi) ? a(lo + 2, lo + 1) * a(lo + 1, lo) : 0.0;

        for (std::size_t k = lo; k + 1 < hi; ++k) {
            // Householder on [x, y, z]
            double col[3] = { x, y, z };
            const std::size_t len = (k + 2 < hi) ? 3 : 2;
            double nrm = 0.0;
            for (std::size_t i = 0; i < len; ++i) nrm += col[i] * col[i];
            nrm = std::sqrt(nrm);
            if (nrm != 0.0) {
                double v[3] = { col[0], col[1], col[2] };
                const double alpha = (v[0] >= 0 ? -nrm : nrm);
                v[0] -= alpha;
                double vsq = 0.0;
                for (std::size_t i = 0; i < len; ++i) vsq += v[i] * v[i];
                if (vsq > 0.0) {
                    const std::size_t jstart = (k > lo) ? k - 1 : lo;
                    for (std::size_t j = jstart; j < hi; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < len; ++i) acc += v[i] * a(k + i, j);
                        acc *= 2.0 / vsq;
                        for (std::size_t i = 0; i < len; ++i) a(k + i, j) -= v[i] * acc;
                    }
                    const std::size_t iend = std::min(hi, k + len + 1);
                    for (std::size_t i = lo; i < iend; ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < len; ++j) acc += a(i, k + j) * v[j];
                        acc *= 2.0 / vsq;
                        for (std::size_t j = 0; j < len; ++j) a(i, k + j) -= acc * v[j];
                    }
                }
            }
            if (k + 1 < hi) x = a(k + 1, k);
            if (k + 2 < hi) y = a(k + 2, k);
            z = (k + 3 < hi) ? a(k + 3, k) : 0.0;
        }
    }
    return out;
}

inline double spectral_radius(const Mat& a) {
    if (a.rows == 0) return 0.0;
    double r = 0.0;
    for (const auto& l : eigenvalues(a)) r = std::max(r, std::abs(l));
    return r;
}

// ----------------------------------------------------------------------------
// Spectral norm (largest singular value) via power iteration on A'A
// ----------------------------------------------------------------------------

struct SpectralResult {
    double sigma = 0.0;
    Vec right_vector;  // unit right singular vector
    std::size_t iterations = 0;
};

// Deterministic start (normalized ones); tolerance on the eigen-residual of A'A.
inline SpectralResult spectral_norm(const Mat& a, double tol = 1e-12, std::size_t max_iters = 200000) {
    SpectralResult res;
    const std::size_t n = a.cols;
    if (n == 0 || a.rows == 0) return res;
    Vec v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    auto apply = [&](const Vec& x) { return matvec_t(a, matvec(a, x)); };
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
        Vec w = apply(v);
        const double wn = norm2(w);
        if (wn == 0.0) {
            // v is in the null space; try a canonical restart before giving up
            bool restarted = false;
            for (std::size_t j = 0; j < n && !restarted; ++j) {
                Vec e(n, 0.0);
                e[j] = 1.0;
                if (norm2(matvec(a, e)) > 0.0) { v = e; restarted = true; }
            }
            if (!restarted) { res.sigma = 0.0; res.right_vector = v; return res; }
            continue;
        }
        Vec vn = scaled(w, 1.0 / wn);
        lambda = dot(vn, apply(vn));
        // residual ||A'A v - lambda v||
        Vec r = apply(vn);
        for (std::size_t i = 0; i < n; ++i) r[i] -= lambda * vn[i];
        v = std::move(vn);
        res.iterations = it + 1;
        if (norm2(r) <= tol * std::max(lambda, 1e-300)) break;
    }
    res.sigma = std::sqrt(std::max(0.0, lambda));
    // sign convention: first nonzero component positive
    for (double c : v) {
        if (c != 0.0) {
            if (c < 0.0) for (double& x : v) x = -x;
            break;
        }
    }
    res.right_vector = std::move(v);
    return res;
}

// ----------------------------------------------------------------------------
// Faddeev-LeVerrier: characteristic polynomial and resolvent numerator
// ----------------------------------------------------------------------------

struct CharPoly {
    // chi(z) = z^n + p[n-1] z^{n-1} + ... + p[0]
    Vec coeffs_ascending;
    // adj(zI - A) = sum_{k=0}^{n-1} M_k z^k  (used for transfer-function numerators)
    std::vector<Mat> adj_coeffs;
};

inline CharPoly faddeev_leverrier(const Mat& a) {
    const std::size_t n = a.rows;
    if (n != a.cols) throw LinalgError("faddeev_leverrier: matrix not square");
    CharPoly cp;
    cp.coeffs_ascending.assign(n, 0.0);
    cp.adj_coeffs.assign(n, Mat(n, n));
    Mat m = Mat::identity(n);  // M_{n-1} = I
    double c = 1.0;            // coefficient of z^n
    cp.adj_coeffs[n - 1] = m;
    for (std::size_t k = 1; k <= n; ++k) {
        Mat am = matmul(a, m);
        double tr = 0.0;
        for (std::size_t i = 0; i < n; ++i) tr += am(i, i);
        c = -tr / static_cast<double>(k);
        cp.coeffs_ascending[n - k] = c;
        if (k < n) {
            m = am;
            for (std::size_t i = 0; i < n; ++i) m(i, i) += c;
            cp.adj_coeffs[n - 1 - k] = m;
        }
    }
    return cp;
}

// Roots of a real polynomial sum_k coeffs[k] z^k via companion-matrix eigenvalues.
// Leading (near-)zero coefficients are trimmed against the largest coefficient.
inline std::vector<std::complex<double>> poly_roots(Vec coeffs, double trim_tol = 1e-12) {
    double maxc = 0.0;
    for (double c : coeffs) maxc = std::max(maxc, std::abs(c));
    if (maxc == 0.0) return {};
    while (coeffs.size() > 1 && std::abs(coeffs.back()) <= trim_tol * maxc) coeffs.pop_back();
    const std::size_t deg = coeffs.size() - 1;
    if (deg == 0) return {};
    Mat comp(deg, deg);
    for (std::size_t i = 0; i + 1 < deg; ++i) comp(i, i + 1) = 1.0;
    for (std::size_t j = 0; j < deg; ++j) comp(deg - 1, j) = -coeffs[j] / coeffs.back();
    return eigenvalues(comp);
}

} // namespace tsrob
