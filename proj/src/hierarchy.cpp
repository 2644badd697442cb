#include "ftk/hierarchy.hpp"

#include <string>

#include "ftk/error.hpp"

namespace ftk {

namespace {

CsrMatrix full_weighting(const StructuredGrid &fine, const StructuredGrid &coarse)
{
    static constexpr double w1[3] = {0.25, 0.5, 0.25};
    std::vector<Triplet> entries;
    for (int jc = 0; jc < coarse.ny; ++jc)
        for (int ic = 0; ic < coarse.nx; ++ic) {
            const int fi = 2 * ic + 1;
            const int fj = 2 * jc + 1;
            for (int dj = -1; dj <= 1; ++dj)
                for (int di = -1; di <= 1; ++di) {
                    const int i = fi + di, j = fj + dj;
                    if (i < 0 || i >= fine.nx || j < 0 || j >= fine.ny) continue;
                    entries.push_back(
                        {coarse.index(ic, jc), fine.index(i, j), w1[di + 1] * w1[dj + 1]});
                }
        }
    return CsrMatrix::from_triplets(coarse.size(), fine.size(), std::move(entries));
}

} // namespace

Hierarchy::Hierarchy(const StructuredGrid &fine, int levels)
{
    fine.validate();
    require(levels >= 1, "hierarchy: need at least one level");
    StructuredGrid g = fine;
    levels_.push_back({g, {}, {}});
    for (int l = 1; l < levels; ++l) {
        StructuredGrid c{g.nx / 2, g.ny / 2, 2.0 * g.h};
        if (c.nx < 2 || c.ny < 2)
            throw InvalidArgument("hierarchy: " + std::to_string(levels) + " levels too many for a " +
                                  std::to_string(fine.nx) + "x" + std::to_string(fine.ny) + " grid");
        CsrMatrix r = full_weighting(g, c);
        CsrMatrix p = transpose(r);
        scale(4.0, p.values());
        levels_.back().restriction = std::move(r);
        levels_.back().prolongation = std::move(p);
        levels_.push_back({c, {}, {}});
        g = c;
    }
}

Vector Hierarchy::restrict_to(std::span<const double> fine, int to) const
{
    require(to >= 0 && to < num_levels(), "hierarchy: level out of range");
    require_dims(fine.size() == static_cast<std::size_t>(levels_[0].grid.size()),
                 "hierarchy: fine vector has wrong length");
    Vector v(fine.begin(), fine.end());
    for (int l = 0; l < to; ++l) v = spmv(levels_[l].restriction, v);
    return v;
}

Vector Hierarchy::prolongate_from(std::span<const double> coarse, int from) const
{
    require(from >= 0 && from < num_levels(), "hierarchy: level out of range");
    require_dims(coarse.size() == static_cast<std::size_t>(levels_[from].grid.size()),
                 "hierarchy: coarse vector has wrong length");
    Vector v(coarse.begin(), coarse.end());
    for (int l = from; l-- > 0;) v = spmv(levels_[l].prolongation, v);
    return v;
}

Hierarchy build_hierarchy(const StructuredGrid &grid, int levels) { return Hierarchy(grid, levels); }

} // namespace ftk
