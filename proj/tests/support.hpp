#pragma once

// Shared fixtures: reference-data loading and small random generators for
// property tests. Every generator takes an explicit seed so failures replay.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ftk/dense.hpp"
#include "ftk/random.hpp"
#include "ftk/sparse.hpp"

namespace testing {

inline std::filesystem::path data_path(const std::string &name) { return std::filesystem::path(FTK_TEST_DATA) / name; }

inline ftk::DenseMatrix read_dense(const std::string &name)
{
    std::ifstream in(data_path(name));
    std::size_t r = 0, c = 0;
    in >> r >> c;
    ftk::DenseMatrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) in >> m(i, j);
    if (!in) throw std::runtime_error("bad reference file " + name);
    return m;
}

inline std::vector<double> read_values(const std::string &name)
{
    std::ifstream in(data_path(name));
    std::vector<double> v;
    for (double x; in >> x;) v.push_back(x);
    return v;
}

inline ftk::CsrMatrix to_csr(const ftk::DenseMatrix &d)
{
    std::vector<ftk::Triplet> t;
    for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = 0; j < d.cols(); ++j)
            if (d(i, j) != 0.0) t.push_back({static_cast<int>(i), static_cast<int>(j), d(i, j)});
    return ftk::CsrMatrix::from_triplets(static_cast<int>(d.rows()), static_cast<int>(d.cols()), std::move(t));
}

inline ftk::Vector random_vector(ftk::Rng &rng, std::size_t n, double lo = -1.0, double hi = 1.0)
{
    ftk::Vector v(n);
    for (double &x : v) x = rng.uniform(lo, hi);
    return v;
}

/// Random sparse matrix with roughly `density` of entries filled.
inline ftk::CsrMatrix random_sparse(ftk::Rng &rng, int rows, int cols, double density)
{
    std::vector<ftk::Triplet> t;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            if (rng.uniform() < density) t.push_back({i, j, rng.uniform(-2.0, 2.0)});
    return ftk::CsrMatrix::from_triplets(rows, cols, std::move(t));
}

/// Sparse symmetric, strictly diagonally dominant with positive diagonal.
inline ftk::CsrMatrix random_spd(ftk::Rng &rng, int n, double density)
{
    std::vector<double> rowsum(static_cast<std::size_t>(n), 0.0);
    std::vector<ftk::Triplet> t;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (rng.uniform() < density) {
                const double v = rng.uniform(-1.0, 1.0);
                t.push_back({i, j, v});
                t.push_back({j, i, v});
                rowsum[i] += std::abs(v);
                rowsum[j] += std::abs(v);
            }
    for (int i = 0; i < n; ++i) t.push_back({i, i, rowsum[i] + rng.uniform(0.5, 2.0)});
    return ftk::CsrMatrix::from_triplets(n, n, std::move(t));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace testing
