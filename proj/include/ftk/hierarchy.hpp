#pragma once

#include <vector>

#include "ftk/grid.hpp"
#include "ftk/sparse.hpp"

namespace ftk {

/// Geometric grid hierarchy on a structured grid.
///
/// Coarse node (I, J) sits at fine node (2I+1, 2J+1); dims halve rounding
/// down. Restriction is 2D full weighting (stencil 1/16 [1 2 1; 2 4 2; 1 2 1])
/// and prolongation is bilinear interpolation, P = 4·Rᵀ (the tensor product
/// of the 1D convention P = 2·Rᵀ).
class Hierarchy {
public:
    struct Level {
        StructuredGrid grid;
        CsrMatrix restriction;  ///< this level -> next coarser (empty on the coarsest)
        CsrMatrix prolongation; ///< next coarser -> this level
    };

    Hierarchy(const StructuredGrid &fine, int levels);

    int num_levels() const { return static_cast<int>(levels_.size()); }
    const Level &level(int l) const { return levels_.at(l); }

    /// Restricts a fine vector down to level `to` (0 = identity).
    Vector restrict_to(std::span<const double> fine, int to) const;
    /// Prolongates a level-`from` vector back to the fine grid.
    Vector prolongate_from(std::span<const double> coarse, int from) const;

private:
    std::vector<Level> levels_;
};

Hierarchy build_hierarchy(const StructuredGrid &grid, int levels);

} // namespace ftk
