#include "khop/dense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "khop/errors.hpp"

namespace khop {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix Matrix::symmetric_part() const {
    if (!square()) throw DimensionError("symmetric_part needs a square matrix");
    Matrix s(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) s(r, c) = 0.5 * ((*this)(r, c) + (*this)(c, r));
    return s;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionError("matrix sum dimension mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionError("matrix difference dimension mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols_ != b.rows_) throw DimensionError("matrix product dimension mismatch");
    Matrix p(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
        for (std::size_t k = 0; k < a.cols_; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols_; ++j) p(i, j) += aik * b(k, j);
        }
    return p;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
    if (a.cols_ != x.size()) throw DimensionError("matrix-vector dimension mismatch");
    Vector y(a.rows_, 0.0);
    for (std::size_t i = 0; i < a.rows_; ++i) {
        const auto r = a.row(i);
        y[i] = std::inner_product(r.begin(), r.end(), x.begin(), 0.0);
    }
    return y;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("max_abs_diff dimension mismatch");
    double m = 0.0;
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
    return m;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return std::sqrt(s);
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

SymMatrix::SymMatrix(Matrix m) : m_(std::move(m)) {
    if (!m_.square()) throw DimensionError("SymMatrix must be square");
    const std::size_t n = m_.rows();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = r + 1; c < n; ++c) {
            const double a = m_(r, c);
            const double b = m_(c, r);
            if (!std::isfinite(a) || !std::isfinite(b)) continue;  // reported by the eigensolver
            if (std::abs(a - b) > tol::kSymmetry * std::max(1.0, std::abs(a)))
                throw DimensionError("matrix is not symmetric at (" + std::to_string(r) + "," +
                                     std::to_string(c) + ")");
            m_(c, r) = a;
        }
}

EigenDecomposition sym_eig(const SymMatrix& sym) {
    const std::size_t n = sym.dim();
    if (n == 0) throw DimensionError("sym_eig on an empty matrix");
    for (double v : sym.matrix().data())
        if (!std::isfinite(v)) throw NumericalError("sym_eig: non-finite matrix entry");

    Matrix a = sym.matrix();
    Matrix v = Matrix::identity(n);
    const double threshold = tol::kJacobiOffDiagonal * std::max(frobenius_norm(a), 1e-300);

    auto off_max = [&] {
        double m = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) m = std::max(m, std::abs(a(p, q)));
        return m;
    };

    int sweep = 0;
    constexpr int kMaxSweeps = 100;
    while (off_max() >= threshold) {
        if (++sweep > kMaxSweeps) throw NumericalError("sym_eig: Jacobi sweeps did not converge");
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < threshold * 1e-3) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                // Rotation angle that annihilates a(p,q).
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

    EigenDecomposition out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    out.sweeps = sweep;
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
    }
    return out;
}

double lambda_min(const SymMatrix& m) { return sym_eig(m).values.front(); }
double lambda_max(const SymMatrix& m) { return sym_eig(m).values.back(); }

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double aij = a(i, j);
            for (std::size_t p = 0; p < b.rows(); ++p)
                for (std::size_t q = 0; q < b.cols(); ++q) k(i * b.rows() + p, j * b.cols() + q) = aij * b(p, q);
        }
    return k;
}

double spectral_norm(const Matrix& m) {
    if (m.empty()) return 0.0;
    // sigma_max^2 = lambda_max(M^T M); use the smaller Gram matrix.
    const Matrix gram = m.rows() < m.cols() ? m * m.transposed() : m.transposed() * m;
    const double l = lambda_max(SymMatrix(gram.symmetric_part()));
    return std::sqrt(std::max(l, 0.0));
}

bool is_negative_definite(const SymMatrix& m, double tol) { return lambda_max(m) < -tol; }

}  // namespace khop
