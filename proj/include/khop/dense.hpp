#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace khop {

using Vector = std::vector<double>;

// Every tolerance used by the numerical checks lives here, so reports can
// cite a single source.
namespace tol {
inline constexpr double kSymmetry = 1e-12;          // relative, per entry
inline constexpr double kJacobiOffDiagonal = 1e-12; // relative to Frobenius norm
inline constexpr double kOrthonormality = 1e-10;
inline constexpr double kPositiveDefinite = 1e-9;   // lambda_min(M) must exceed this
inline constexpr double kNegativeDefinite = 1e-9;   // lambda_max must be below -this
inline constexpr double kLaplacianZero = 1e-8;      // eigenvalues below are treated as 0
inline constexpr double kIdentity = 1e-10;          // structural identities
inline constexpr double kIssAbsolute = 1e-6;
}  // namespace tol

/// Dense row-major real matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> d);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool square() const noexcept { return rows_ == cols_; }
    bool empty() const noexcept { return rows_ == 0 || cols_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Matrix transposed() const;
    Matrix symmetric_part() const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s);

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }
    friend Matrix operator*(const Matrix& a, const Matrix& b);
    friend Vector operator*(const Matrix& a, std::span<const double> x);

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Largest absolute entry of a - b (dimensions must agree).
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m);

/// Symmetric matrix; symmetry is checked on construction and the stored
/// entries are exactly mirrored afterwards.
class SymMatrix {
public:
    explicit SymMatrix(Matrix m);

    std::size_t dim() const noexcept { return m_.rows(); }
    const Matrix& matrix() const noexcept { return m_; }
    double operator()(std::size_t r, std::size_t c) const { return m_(r, c); }

private:
    Matrix m_;
};

struct EigenDecomposition {
    Vector values;   // ascending
    Matrix vectors;  // column j pairs with values[j]
    int sweeps = 0;
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
EigenDecomposition sym_eig(const SymMatrix& m);

double lambda_min(const SymMatrix& m);
double lambda_max(const SymMatrix& m);

Matrix kron(const Matrix& a, const Matrix& b);

/// Largest singular value.
double spectral_norm(const Matrix& m);

/// True iff lambda_max(m) < -tol.
bool is_negative_definite(const SymMatrix& m, double tol = tol::kNegativeDefinite);

double norm2(std::span<const double> v);

}  // namespace khop
