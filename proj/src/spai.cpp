#include <algorithm>
#include <string>

#include "ftk/dense.hpp"
#include "ftk/error.hpp"
#include "ftk/preconditioner.hpp"

namespace ftk {

CsrMatrix spai1(const CsrMatrix &a)
{
    require_dims(a.rows() == a.cols(), "spai1: matrix not square");
    const int n = a.rows();
    const CsrMatrix at = transpose(a); // row k of at = column k of a

    std::vector<int> row_slot(static_cast<std::size_t>(n), -1);
    std::vector<Triplet> out;
    out.reserve(a.nnz());

    // Columns are independent least-squares problems.
    for (int j = 0; j < n; ++j) {
        const auto pattern = at.row_cols(j);
        std::vector<int> rows;
        for (int k : pattern)
            for (int i : at.row_cols(k))
                if (row_slot[i] < 0) {
                    row_slot[i] = 0;
                    rows.push_back(i);
                }
        std::sort(rows.begin(), rows.end());
        for (std::size_t r = 0; r < rows.size(); ++r) row_slot[rows[r]] = static_cast<int>(r);

        DenseMatrix sub(rows.size(), pattern.size());
        for (std::size_t c = 0; c < pattern.size(); ++c) {
            const auto rc = at.row_cols(pattern[c]);
            const auto rv = at.row_values(pattern[c]);
            for (std::size_t e = 0; e < rc.size(); ++e) sub(row_slot[rc[e]], c) = rv[e];
        }
        std::vector<double> rhs(rows.size(), 0.0);
        if (row_slot[j] >= 0 && static_cast<std::size_t>(row_slot[j]) < rows.size() &&
            rows[row_slot[j]] == j)
            rhs[row_slot[j]] = 1.0;

        LeastSquaresResult ls;
        try {
            if (rows.size() < pattern.size()) throw Breakdown("underdetermined");
            ls = least_squares_qr(std::move(sub), std::move(rhs));
        } catch (const Breakdown &) {
            throw Breakdown("spai1: rank-deficient least-squares subproblem in column " +
                            std::to_string(j));
        }
        for (std::size_t c = 0; c < pattern.size(); ++c) out.push_back({pattern[c], j, ls.x[c]});
        for (int i : rows) row_slot[i] = -1;
    }
    return CsrMatrix::from_triplets(n, n, std::move(out));
}

} // namespace ftk
