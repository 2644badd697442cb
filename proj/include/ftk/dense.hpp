#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ftk {

/// Small row-major dense matrix used for local subproblems (SPAI columns,
/// Gram blocks). Not meant for large systems.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill)
    {
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct LeastSquaresResult {
    std::vector<double> x;
    /// Smallest |R_kk| / largest |R_kk| of the triangular factor.
    double rcond = 0.0;
};

/// Minimizes ‖A x − b‖₂ for a tall (rows ≥ cols) matrix by Householder QR.
/// Throws Breakdown when the triangular factor is numerically singular.
LeastSquaresResult least_squares_qr(DenseMatrix a, std::vector<double> b,
                                    double rank_tol = 1e-13);

struct SymmetricEigen {
    std::vector<double> values;
    DenseMatrix vectors; // columns are eigenvectors
};

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
SymmetricEigen symmetric_eigen(const DenseMatrix &a);

struct PseudoInverse {
    DenseMatrix matrix;
    std::size_t rank = 0;
};

/// Moore–Penrose inverse of a symmetric matrix; eigenvalues with
/// |λ| ≤ rel_tol·max|λ| are treated as zero.
PseudoInverse symmetric_pinv(const DenseMatrix &a, double rel_tol);

DenseMatrix multiply(const DenseMatrix &a, const DenseMatrix &b);

} // namespace ftk
