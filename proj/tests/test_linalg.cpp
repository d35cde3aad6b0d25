#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "tsrob/linalg.hpp"

using namespace tsrob;

TEST_CASE("eigenvalues match the reference on random matrices") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> dims(1, 16);
    for (int trial = 0; trial < 150; ++trial) {
        const int n = dims(rng);
        Mat a(n, n);
        for (auto& v : a.data) v = g(rng);
        auto mine = eigenvalues(a);
        auto ref = oracles::eigenvalues_ref(a);
        REQUIRE(mine.size() == ref.size());
        auto cmp = [](const std::complex<double>& x, const std::complex<double>& y) {
            return x.real() != y.real() ? x.real() < y.real() : x.imag() < y.imag();
        };
        std::sort(mine.begin(), mine.end(), cmp);
        std::sort(ref.begin(), ref.end(), cmp);
        for (std::size_t i = 0; i < mine.size(); ++i)
            REQUIRE(std::abs(mine[i] - ref[i]) < 1e-8 * std::max(1.0, std::abs(ref[i])));
    }
}

TEST_CASE("spectral norm matches dense SVD and is attained by the returned vector") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> dims(1, 14);
    for (int trial = 0; trial < 100; ++trial) {
        Mat a(dims(rng), dims(rng));
        for (auto& v : a.data) v = g(rng);
        const SpectralResult sr = spectral_norm(a, 1e-13);
        const double ref = oracles::spectral_norm_ref(a);
        REQUIRE(sr.sigma == Catch::Approx(ref).epsilon(1e-9));
        REQUIRE(norm2(sr.right_vector) == Catch::Approx(1.0).epsilon(1e-10));
        REQUIRE(norm2(matvec(a, sr.right_vector)) == Catch::Approx(sr.sigma).margin(1e-9));
        // sign convention: first nonzero component positive
        for (double c : sr.right_vector) {
            if (c != 0.0) {
                REQUIRE(c > 0.0);
                break;
            }
        }
    }
}

TEST_CASE("rank handles exact deficiencies") {
    Mat a(3, 3);
    a(0, 0) = 1;
    a(1, 1) = 2;
    REQUIRE(rank(a) == 2);
    REQUIRE(rank(Mat::identity(5)) == 5);
    REQUIRE(rank(Mat(4, 4)) == 0);
    // duplicated column
    Mat b(3, 3);
    for (int i = 0; i < 3; ++i) {
        b(i, 0) = i + 1.0;
        b(i, 1) = 2.0 * (i + 1.0);
        b(i, 2) = i * i + 1.0;
    }
    REQUIRE(rank(b) == 2);
}

TEST_CASE("lu_solve solves and detects singularity") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    Mat a(6, 6);
    for (auto& v : a.data) v = g(rng);
    Mat x(6, 2);
    for (auto& v : x.data) v = g(rng);
    const Mat b = matmul(a, x);
    const Mat sol = lu_solve(a, b);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        REQUIRE(sol.data[i] == Catch::Approx(x.data[i]).margin(1e-9));
    REQUIRE_THROWS_AS(lu_solve(Mat(3, 3), Mat::identity(3)), LinalgError);
}

TEST_CASE("faddeev-leverrier recovers the characteristic polynomial") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::uniform_int_distribution<int> dims(1, 8);
        const int n = dims(rng);
        Mat a(n, n);
        for (auto& v : a.data) v = g(rng);
        const CharPoly cp = faddeev_leverrier(a);
        // chi(lambda) = 0 at every eigenvalue
        for (const auto& lambda : oracles::eigenvalues_ref(a)) {
            std::complex<double> acc = 1.0;  // leading z^n
            std::complex<double> zp = 1.0;
            std::complex<double> val = 0.0;
            for (int k = 0; k < n; ++k) {
                val += cp.coeffs_ascending[k] * zp;
                zp *= lambda;
            }
            val += zp;  // z^n term
            (void)acc;
            REQUIRE(std::abs(val) < 1e-6 * std::max(1.0, std::pow(std::abs(lambda), n)));
        }
    }
}

TEST_CASE("poly_roots recovers planted roots") {
    // (z-1)(z-2)(z-3) = z^3 - 6z^2 + 11z - 6
    auto roots = poly_roots({ -6, 11, -6, 1 });
    std::sort(roots.begin(), roots.end(),
              [](auto a, auto b) { return a.real() < b.real(); });
    REQUIRE(roots.size() == 3);
    REQUIRE(roots[0].real() == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(roots[1].real() == Catch::Approx(2.0).margin(1e-9));
    REQUIRE(roots[2].real() == Catch::Approx(3.0).margin(1e-9));
}

TEST_CASE("matrix norms") {
    Mat a(2, 3);
    a(0, 0) = 1;
    a(0, 1) = -2;
    a(0, 2) = 3;
    a(1, 0) = -4;
    a(1, 1) = 5;
    a(1, 2) = -6;
    REQUIRE(matrix_norm1(a) == Catch::Approx(9.0));     // max column sum
    REQUIRE(matrix_norm_inf(a) == Catch::Approx(15.0)); // max row sum
}
