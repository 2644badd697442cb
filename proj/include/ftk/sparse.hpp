#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ftk {

using Vector = std::vector<double>;

struct Triplet {
    int row;
    int col;
    double value;
};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row; every product
/// accumulates a row in ascending column order so results are reproducible
/// bit for bit across kernels.
class CsrMatrix {
public:
    CsrMatrix() = default;
    CsrMatrix(int nrows, int ncols);
    CsrMatrix(int nrows, int ncols, std::vector<int> row_offsets,
              std::vector<int> col_indices, std::vector<double> values);

    /// Builds from unordered triplets. Duplicates are summed unless
    /// `reject_duplicates` is set, in which case they raise InvalidArgument.
    static CsrMatrix from_triplets(int nrows, int ncols, std::vector<Triplet> entries,
                                   bool reject_duplicates = false);
    static CsrMatrix identity(int n);
    static CsrMatrix diagonal(std::span<const double> diag);

    int rows() const { return nrows_; }
    int cols() const { return ncols_; }
    std::size_t nnz() const { return values_.size(); }

    const std::vector<int> &row_offsets() const { return row_offsets_; }
    const std::vector<int> &col_indices() const { return col_indices_; }
    const std::vector<double> &values() const { return values_; }
    std::vector<double> &values() { return values_; }

    std::span<const int> row_cols(int i) const;
    std::span<const double> row_values(int i) const;

    /// Entry (i, j) or 0 when not stored.
    double at(int i, int j) const;
    Vector diagonal_values() const;
    double max_abs() const;

    std::vector<Triplet> triplets() const;

    friend bool operator==(const CsrMatrix &, const CsrMatrix &) = default;

private:
    void validate() const;

    int nrows_ = 0;
    int ncols_ = 0;
    std::vector<int> row_offsets_{0};
    std::vector<int> col_indices_;
    std::vector<double> values_;
};

CsrMatrix transpose(const CsrMatrix &a);
/// (a + aᵀ) / 2, for square a.
CsrMatrix symmetric_part(const CsrMatrix &a);
bool is_symmetric(const CsrMatrix &a);

void spmv(const CsrMatrix &a, std::span<const double> x, std::span<double> y);
Vector spmv(const CsrMatrix &a, std::span<const double> x);
/// y = aᵀ x without forming the transpose.
void spmv_transpose(const CsrMatrix &a, std::span<const double> x, std::span<double> y);

// BLAS-1 on dense vectors.
double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);
double norm_inf(std::span<const double> x);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// y = x + beta * y
void xpby(std::span<const double> x, double beta, std::span<double> y);
void scale(double alpha, std::span<double> x);
void copy(std::span<const double> x, std::span<double> y);
bool all_finite(std::span<const double> x);

/// Block of k vectors stored row-interleaved: the k values of row i are
/// contiguous, so a sweep over rows touches all right-hand sides at once.
class MultiVector {
public:
    MultiVector() = default;
    MultiVector(std::size_t n, std::size_t k, double fill = 0.0);

    std::size_t rows() const { return n_; }
    std::size_t cols() const { return k_; }

    double &operator()(std::size_t i, std::size_t j) { return data_[i * k_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * k_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * k_, k_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * k_, k_}; }

    Vector column(std::size_t j) const;
    void set_column(std::size_t j, std::span<const double> v);

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    friend bool operator==(const MultiVector &, const MultiVector &) = default;

private:
    std::size_t n_ = 0;
    std::size_t k_ = 0;
    std::vector<double> data_;
};

MultiVector spmm_multi(const CsrMatrix &a, const MultiVector &x);
void spmm_multi(const CsrMatrix &a, const MultiVector &x, MultiVector &y);

/// Columnwise norms.
Vector column_norms(const MultiVector &x);
/// Y(:,j) += alpha[j] * X(:,j)
void axpy_columns(std::span<const double> alpha, const MultiVector &x, MultiVector &y);

enum class GramMode { full, block_diagonal, diagonal };

/// k×k inner-product matrix with a declared sparsity pattern.
class GramMatrix {
public:
    GramMatrix(std::size_t k, GramMode mode, std::size_t block_size = 1);

    std::size_t size() const { return k_; }
    GramMode mode() const { return mode_; }
    std::size_t block_size() const { return block_; }

    /// True when (i, j) lies inside the declared pattern.
    bool in_pattern(std::size_t i, std::size_t j) const;

    double &operator()(std::size_t i, std::size_t j) { return data_[i * k_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * k_ + j]; }

    std::span<const double> data() const { return data_; }

private:
    std::size_t k_;
    GramMode mode_;
    std::size_t block_;
    std::vector<double> data_;
};

/// XᵀY restricted to the pattern of `mode`; entries outside stay zero.
GramMatrix dot_block(const MultiVector &x, const MultiVector &y, GramMode mode,
                     std::size_t block_size = 1);

} // namespace ftk
