#include "ftk/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ftk/error.hpp"

namespace ftk {

CsrMatrix::CsrMatrix(int nrows, int ncols)
    : nrows_(nrows), ncols_(ncols), row_offsets_(static_cast<std::size_t>(nrows) + 1, 0)
{
    require(nrows >= 0 && ncols >= 0, "CsrMatrix: negative dimension");
}

CsrMatrix::CsrMatrix(int nrows, int ncols, std::vector<int> row_offsets,
                     std::vector<int> col_indices, std::vector<double> values)
    : nrows_(nrows), ncols_(ncols), row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)), values_(std::move(values))
{
    validate();
}

void CsrMatrix::validate() const
{
    require(nrows_ >= 0 && ncols_ >= 0, "CsrMatrix: negative dimension");
    require(row_offsets_.size() == static_cast<std::size_t>(nrows_) + 1,
            "CsrMatrix: row_offsets must have nrows+1 entries");
    require(row_offsets_.front() == 0, "CsrMatrix: row_offsets[0] must be 0");
    require(col_indices_.size() == values_.size(), "CsrMatrix: col/value length mismatch");
    require(static_cast<std::size_t>(row_offsets_.back()) == values_.size(),
            "CsrMatrix: row_offsets[nrows] must equal nnz");
    for (int i = 0; i < nrows_; ++i) {
        require(row_offsets_[i] <= row_offsets_[i + 1], "CsrMatrix: row_offsets decreasing");
        for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
            const int c = col_indices_[k];
            require(c >= 0 && c < ncols_, "CsrMatrix: column index out of range in row " +
                                              std::to_string(i));
            if (k > row_offsets_[i])
                require(col_indices_[k - 1] < c,
                        "CsrMatrix: columns not strictly increasing in row " + std::to_string(i));
        }
    }
}

CsrMatrix CsrMatrix::from_triplets(int nrows, int ncols, std::vector<Triplet> entries,
                                   bool reject_duplicates)
{
    for (const auto &t : entries)
        require(t.row >= 0 && t.row < nrows && t.col >= 0 && t.col < ncols,
                "CsrMatrix: triplet (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                    ") out of range");
    std::stable_sort(entries.begin(), entries.end(), [](const Triplet &a, const Triplet &b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });

    std::vector<int> offsets(static_cast<std::size_t>(nrows) + 1, 0);
    std::vector<int> cols;
    std::vector<double> vals;
    cols.reserve(entries.size());
    vals.reserve(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto &t = entries[k];
        if (!cols.empty() && k > 0 && entries[k - 1].row == t.row && entries[k - 1].col == t.col) {
            if (reject_duplicates)
                throw InvalidArgument("duplicate entry (" + std::to_string(t.row) + ", " +
                                      std::to_string(t.col) + ")");
            vals.back() += t.value;
            continue;
        }
        cols.push_back(t.col);
        vals.push_back(t.value);
        ++offsets[t.row + 1];
    }
    for (int i = 0; i < nrows; ++i) offsets[i + 1] += offsets[i];
    return CsrMatrix(nrows, ncols, std::move(offsets), std::move(cols), std::move(vals));
}

CsrMatrix CsrMatrix::identity(int n)
{
    std::vector<double> ones(static_cast<std::size_t>(n), 1.0);
    return diagonal(ones);
}

CsrMatrix CsrMatrix::diagonal(std::span<const double> diag)
{
    const int n = static_cast<int>(diag.size());
    std::vector<int> offsets(diag.size() + 1);
    std::vector<int> cols(diag.size());
    for (int i = 0; i <= n; ++i) offsets[i] = i;
    for (int i = 0; i < n; ++i) cols[i] = i;
    return CsrMatrix(n, n, std::move(offsets), std::move(cols),
                     std::vector<double>(diag.begin(), diag.end()));
}

std::span<const int> CsrMatrix::row_cols(int i) const
{
    return {col_indices_.data() + row_offsets_[i],
            static_cast<std::size_t>(row_offsets_[i + 1] - row_offsets_[i])};
}

std::span<const double> CsrMatrix::row_values(int i) const
{
    return {values_.data() + row_offsets_[i],
            static_cast<std::size_t>(row_offsets_[i + 1] - row_offsets_[i])};
}

double CsrMatrix::at(int i, int j) const
{
    const auto cols = row_cols(i);
    const auto it = std::lower_bound(cols.begin(), cols.end(), j);
    if (it == cols.end() || *it != j) return 0.0;
    return values_[row_offsets_[i] + (it - cols.begin())];
}

Vector CsrMatrix::diagonal_values() const
{
    Vector d(static_cast<std::size_t>(std::min(nrows_, ncols_)), 0.0);
    for (int i = 0; i < static_cast<int>(d.size()); ++i) d[i] = at(i, i);
    return d;
}

double CsrMatrix::max_abs() const
{
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
}

std::vector<Triplet> CsrMatrix::triplets() const
{
    std::vector<Triplet> out;
    out.reserve(nnz());
    for (int i = 0; i < nrows_; ++i)
        for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k)
            out.push_back({i, col_indices_[k], values_[k]});
    return out;
}

CsrMatrix transpose(const CsrMatrix &a)
{
    std::vector<int> offsets(static_cast<std::size_t>(a.cols()) + 1, 0);
    for (int c : a.col_indices()) ++offsets[c + 1];
    for (int j = 0; j < a.cols(); ++j) offsets[j + 1] += offsets[j];
    std::vector<int> cols(a.nnz());
    std::vector<double> vals(a.nnz());
    std::vector<int> next(offsets.begin(), offsets.end() - 1);
    for (int i = 0; i < a.rows(); ++i) {
        const auto rc = a.row_cols(i);
        const auto rv = a.row_values(i);
        for (std::size_t k = 0; k < rc.size(); ++k) {
            const int pos = next[rc[k]]++;
            cols[pos] = i;
            vals[pos] = rv[k];
        }
    }
    return CsrMatrix(a.cols(), a.rows(), std::move(offsets), std::move(cols), std::move(vals));
}

CsrMatrix symmetric_part(const CsrMatrix &a)
{
    require_dims(a.rows() == a.cols(), "symmetric_part: matrix not square");
    auto entries = a.triplets();
    const std::size_t n = entries.size();
    entries.reserve(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
        entries[k].value *= 0.5;
        entries.push_back({entries[k].col, entries[k].row, entries[k].value});
    }
    return CsrMatrix::from_triplets(a.rows(), a.cols(), std::move(entries));
}

bool is_symmetric(const CsrMatrix &a)
{
    return a.rows() == a.cols() && transpose(a) == a;
}

void spmv(const CsrMatrix &a, std::span<const double> x, std::span<double> y)
{
    require_dims(x.size() == static_cast<std::size_t>(a.cols()), "spmv: x has wrong length");
    require_dims(y.size() == static_cast<std::size_t>(a.rows()), "spmv: y has wrong length");
    const auto &off = a.row_offsets();
    const auto &col = a.col_indices();
    const auto &val = a.values();
    for (int i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (int k = off[i]; k < off[i + 1]; ++k) s += val[k] * x[col[k]];
        y[i] = s;
    }
}

Vector spmv(const CsrMatrix &a, std::span<const double> x)
{
    Vector y(static_cast<std::size_t>(a.rows()));
    spmv(a, x, y);
    return y;
}

void spmv_transpose(const CsrMatrix &a, std::span<const double> x, std::span<double> y)
{
    require_dims(x.size() == static_cast<std::size_t>(a.rows()),
                 "spmv_transpose: x has wrong length");
    require_dims(y.size() == static_cast<std::size_t>(a.cols()),
                 "spmv_transpose: y has wrong length");
    std::fill(y.begin(), y.end(), 0.0);
    for (int i = 0; i < a.rows(); ++i) {
        const auto rc = a.row_cols(i);
        const auto rv = a.row_values(i);
        for (std::size_t k = 0; k < rc.size(); ++k) y[rc[k]] += rv[k] * x[i];
    }
}

double dot(std::span<const double> x, std::span<const double> y)
{
    require_dims(x.size() == y.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double norm_inf(std::span<const double> x)
{
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y)
{
    require_dims(x.size() == y.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void xpby(std::span<const double> x, double beta, std::span<double> y)
{
    require_dims(x.size() == y.size(), "xpby: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + beta * y[i];
}

void scale(double alpha, std::span<double> x)
{
    for (double &v : x) v *= alpha;
}

void copy(std::span<const double> x, std::span<double> y)
{
    require_dims(x.size() == y.size(), "copy: length mismatch");
    std::copy(x.begin(), x.end(), y.begin());
}

bool all_finite(std::span<const double> x)
{
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

MultiVector::MultiVector(std::size_t n, std::size_t k, double fill)
    : n_(n), k_(k), data_(n * k, fill)
{
}

Vector MultiVector::column(std::size_t j) const
{
    require(j < k_, "MultiVector::column: index out of range");
    Vector v(n_);
    for (std::size_t i = 0; i < n_; ++i) v[i] = data_[i * k_ + j];
    return v;
}

void MultiVector::set_column(std::size_t j, std::span<const double> v)
{
    require(j < k_, "MultiVector::set_column: index out of range");
    require_dims(v.size() == n_, "MultiVector::set_column: length mismatch");
    for (std::size_t i = 0; i < n_; ++i) data_[i * k_ + j] = v[i];
}

void spmm_multi(const CsrMatrix &a, const MultiVector &x, MultiVector &y)
{
    require_dims(x.rows() == static_cast<std::size_t>(a.cols()), "spmm_multi: X has wrong rows");
    require_dims(y.rows() == static_cast<std::size_t>(a.rows()) && y.cols() == x.cols(),
                 "spmm_multi: Y has wrong shape");
    const std::size_t k = x.cols();
    for (int i = 0; i < a.rows(); ++i) {
        auto out = y.row(i);
        std::fill(out.begin(), out.end(), 0.0);
        const auto rc = a.row_cols(i);
        const auto rv = a.row_values(i);
        for (std::size_t e = 0; e < rc.size(); ++e) {
            const auto in = x.row(rc[e]);
            for (std::size_t j = 0; j < k; ++j) out[j] += rv[e] * in[j];
        }
    }
}

MultiVector spmm_multi(const CsrMatrix &a, const MultiVector &x)
{
    MultiVector y(static_cast<std::size_t>(a.rows()), x.cols());
    spmm_multi(a, x, y);
    return y;
}

Vector column_norms(const MultiVector &x)
{
    Vector s(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto r = x.row(i);
        for (std::size_t j = 0; j < x.cols(); ++j) s[j] += r[j] * r[j];
    }
    for (double &v : s) v = std::sqrt(v);
    return s;
}

void axpy_columns(std::span<const double> alpha, const MultiVector &x, MultiVector &y)
{
    require_dims(alpha.size() == x.cols() && x.cols() == y.cols() && x.rows() == y.rows(),
                 "axpy_columns: shape mismatch");
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto xi = x.row(i);
        auto yi = y.row(i);
        for (std::size_t j = 0; j < x.cols(); ++j) yi[j] += alpha[j] * xi[j];
    }
}

GramMatrix::GramMatrix(std::size_t k, GramMode mode, std::size_t block_size)
    : k_(k), mode_(mode), block_(mode == GramMode::block_diagonal ? block_size
                                 : mode == GramMode::full        ? k
                                                                 : 1),
      data_(k * k, 0.0)
{
    if (mode == GramMode::block_diagonal)
        require(block_size >= 1 && k % block_size == 0,
                "GramMatrix: block size " + std::to_string(block_size) + " does not divide k=" +
                    std::to_string(k));
    if (mode == GramMode::full && k == 0) block_ = 1;
}

bool GramMatrix::in_pattern(std::size_t i, std::size_t j) const
{
    switch (mode_) {
    case GramMode::full:
        return true;
    case GramMode::diagonal:
        return i == j;
    case GramMode::block_diagonal:
        return i / block_ == j / block_;
    }
    return false;
}

GramMatrix dot_block(const MultiVector &x, const MultiVector &y, GramMode mode,
                     std::size_t block_size)
{
    require_dims(x.rows() == y.rows() && x.cols() == y.cols(), "dot_block: shape mismatch");
    GramMatrix g(x.cols(), mode, block_size);
    const std::size_t k = x.cols();
    const std::size_t bs = g.block_size();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        const auto yr = y.row(r);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t lo = mode == GramMode::full ? 0 : (i / bs) * bs;
            const std::size_t hi = mode == GramMode::full ? k : lo + bs;
            for (std::size_t j = lo; j < hi; ++j) g(i, j) += xr[i] * yr[j];
        }
    }
    return g;
}

} // namespace ftk
