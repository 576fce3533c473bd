#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "khop/dense.hpp"
#include "khop/errors.hpp"
#include "test_support.hpp"

using namespace khop;
using khop::testing::random_matrix;
using khop::testing::random_symmetric;

namespace {

// Cofactor expansion; an independent path to det(A - lambda I).
double det(const Matrix& a) {
    const std::size_t n = a.rows();
    if (n == 1) return a(0, 0);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        Matrix minor(n - 1, n - 1);
        for (std::size_t r = 1; r < n; ++r)
            for (std::size_t cc = 0, k = 0; cc < n; ++cc)
                if (cc != c) minor(r - 1, k++) = a(r, cc);
        s += (c % 2 ? -1.0 : 1.0) * a(0, c) * det(minor);
    }
    return s;
}

// Largest singular value by power iteration on A^T A.
double power_norm(const Matrix& a) {
    const Matrix g = a.transposed() * a;
    Vector v(g.cols(), 1.0);
    double lam = 0.0;
    for (int it = 0; it < 2000; ++it) {
        Vector w = g * v;
        const double nw = norm2(w);
        if (nw == 0.0) return 0.0;
        for (double& x : w) x /= nw;
        lam = nw;
        v = w;
    }
    return std::sqrt(lam);
}

}  // namespace

TEST_CASE("matrix arithmetic") {
    const Matrix a{{1, 2}, {3, 4}};
    const Matrix b{{0, 1}, {1, 0}};
    CHECK(a * b == Matrix{{2, 1}, {4, 3}});
    CHECK(a + b == Matrix{{1, 3}, {4, 4}});
    CHECK(a - b == Matrix{{1, 1}, {2, 4}});
    CHECK(2.0 * a == Matrix{{2, 4}, {6, 8}});
    CHECK(a.transposed() == Matrix{{1, 3}, {2, 4}});
    CHECK(a.symmetric_part() == Matrix{{1, 2.5}, {2.5, 4}});
    const Vector x{1.0, -1.0};
    CHECK(a * std::span<const double>(x) == Vector{-1.0, -1.0});
    CHECK(Matrix::identity(3) == Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const Vector d{2.0, 3.0};
    CHECK(Matrix::diagonal(d) == Matrix{{2, 0}, {0, 3}});
    CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(30.0)));
    CHECK(max_abs_diff(a, b) == 4.0);
}

TEST_CASE("dimension mismatches throw") {
    const Matrix a(2, 3);
    const Matrix b(2, 2);
    CHECK_THROWS_AS(a * a, DimensionError);
    CHECK_THROWS_AS(a + b, DimensionError);
    CHECK_THROWS_AS((Matrix{{1, 2}, {3}}), DimensionError);
    CHECK_THROWS_AS(SymMatrix{a}, DimensionError);
}

TEST_CASE("SymMatrix checks symmetry") {
    CHECK_THROWS_AS(SymMatrix(Matrix{{1, 2}, {2.1, 1}}), DimensionError);
    CHECK_NOTHROW(SymMatrix(Matrix{{1, 2}, {2 + 1e-15, 1}}));
    const SymMatrix s(Matrix{{1, 2}, {2 + 1e-15, 1}});
    CHECK(s(0, 1) == s(1, 0));
}

TEST_CASE("2x2 eigenvalues match the characteristic polynomial") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix m = random_symmetric(rng, 2);
        const double tr = m(0, 0) + m(1, 1);
        const double dt = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
        const double disc = std::sqrt(tr * tr - 4.0 * dt);
        const auto eig = sym_eig(SymMatrix(m));
        CHECK(eig.values[0] == doctest::Approx((tr - disc) / 2).epsilon(1e-12));
        CHECK(eig.values[1] == doctest::Approx((tr + disc) / 2).epsilon(1e-12));
    }
}

TEST_CASE("eigenvalues are roots of det(A - lambda I) and sum to the trace") {
    std::mt19937_64 rng(12);
    for (std::size_t n = 3; n <= 5; ++n)
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix m = random_symmetric(rng, n);
            const auto eig = sym_eig(SymMatrix(m));
            double tr = 0.0, sum = 0.0, prod = 1.0;
            for (std::size_t i = 0; i < n; ++i) {
                tr += m(i, i);
                sum += eig.values[i];
                prod *= eig.values[i];
                CHECK(std::abs(det(m - Matrix::identity(n) * eig.values[i])) < 1e-10);
                if (i > 0) CHECK(eig.values[i - 1] <= eig.values[i]);
            }
            CHECK(sum == doctest::Approx(tr).epsilon(1e-12));
            CHECK(prod == doctest::Approx(det(m)).epsilon(1e-9));
        }
}

TEST_CASE("eigenvectors are orthonormal and satisfy A v = lambda v") {
    std::mt19937_64 rng(13);
    for (std::size_t n = 1; n <= 8; ++n) {
        const Matrix m = random_symmetric(rng, n);
        const auto eig = sym_eig(SymMatrix(m));
        const Matrix& v = eig.vectors;
        CHECK(max_abs_diff(v.transposed() * v, Matrix::identity(n)) < tol::kOrthonormality);
        const Matrix av = m * v;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(av(i, j) - eig.values[j] * v(i, j)) < 1e-10);
    }
}

TEST_CASE("diagonal and repeated eigenvalues") {
    const auto eig = sym_eig(SymMatrix(Matrix{{3, 0, 0}, {0, 1, 0}, {0, 0, 3}}));
    CHECK(eig.values == Vector{1.0, 3.0, 3.0});
    CHECK(lambda_min(SymMatrix(Matrix::identity(4))) == 1.0);
    CHECK(lambda_max(SymMatrix(Matrix{{2, 1}, {1, 2}})) == doctest::Approx(3.0));
}

TEST_CASE("non-finite input is reported") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(sym_eig(SymMatrix(Matrix{{1, 0}, {0, nan}})), NumericalError);
    CHECK_THROWS_AS(sym_eig(SymMatrix(Matrix{{INFINITY, 0}, {0, 1}})), NumericalError);
}

TEST_CASE("Kronecker product: mixed-product identity and transpose") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = random_matrix(rng, 2, 3), c = random_matrix(rng, 3, 2);
        const Matrix b = random_matrix(rng, 3, 2), d = random_matrix(rng, 2, 4);
        CHECK(max_abs_diff(kron(a, b) * kron(c, d), kron(a * c, b * d)) < 1e-12);
        CHECK(max_abs_diff(kron(a, b).transposed(), kron(a.transposed(), b.transposed())) < 1e-15);
    }
    const Matrix k = kron(Matrix{{1, 2}}, Matrix::identity(2));
    CHECK(k == Matrix{{1, 0, 2, 0}, {0, 1, 0, 2}});
}

TEST_CASE("Kronecker spectrum is the product of spectra") {
    std::mt19937_64 rng(15);
    const Matrix a = random_symmetric(rng, 3);
    const Matrix b = random_symmetric(rng, 2);
    const auto ea = sym_eig(SymMatrix(a)).values;
    const auto eb = sym_eig(SymMatrix(b)).values;
    Vector expect;
    for (double x : ea)
        for (double y : eb) expect.push_back(x * y);
    std::sort(expect.begin(), expect.end());
    const auto ek = sym_eig(SymMatrix(kron(a, b))).values;
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(ek[i] == doctest::Approx(expect[i]).epsilon(1e-10));
}

TEST_CASE("spectral norm agrees with power iteration") {
    std::mt19937_64 rng(16);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix a = random_matrix(rng, 3, 5);
        CHECK(spectral_norm(a) == doctest::Approx(power_norm(a)).epsilon(1e-8));
        CHECK(spectral_norm(a) == doctest::Approx(spectral_norm(a.transposed())).epsilon(1e-12));
    }
    CHECK(spectral_norm(Matrix{{3, 0}, {0, -4}}) == doctest::Approx(4.0));
}

TEST_CASE("negative definiteness test") {
    CHECK(is_negative_definite(SymMatrix(Matrix{{-1, 0}, {0, -2}})));
    CHECK_FALSE(is_negative_definite(SymMatrix(Matrix{{-1, 0}, {0, 0}})));
    CHECK_FALSE(is_negative_definite(SymMatrix(Matrix{{-1e-12, 0}, {0, -1}})));
}

TEST_CASE("norm2") {
    const Vector v{3.0, 4.0};
    CHECK(norm2(v) == 5.0);
    CHECK(norm2(Vector{}) == 0.0);
}
