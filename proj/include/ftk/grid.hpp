#pragma once

#include <cstdint>
#include <vector>

#include "ftk/sparse.hpp"

namespace ftk {

/// Interior nodes of a rectangular grid with homogeneous Dirichlet boundary.
/// Node (i, j) has global index i + nx * j.
struct StructuredGrid {
    int nx = 2;
    int ny = 2;
    double h = 1.0;

    int size() const { return nx * ny; }
    int index(int i, int j) const { return i + nx * j; }
    void validate() const;
};

/// Directional diffusion coefficients.
struct Anisotropy {
    double eps_x = 1.0;
    double eps_y = 1.0;

    void validate() const;
};

/// 5-point finite-difference operator −eps_x ∂xx − eps_y ∂yy, scaled by 1/h².
CsrMatrix assemble_poisson(const StructuredGrid &grid, const Anisotropy &aniso = {});

/// Ownership of unknowns by simulated ranks.
///
/// `halo[r]` holds the indices outside rank r that its rows couple to, in
/// ascending order. `recv[r]` and `send[r]` list the exchange pattern per
/// neighbor; both are ordered by neighbor rank.
struct Partition {
    struct Link {
        int neighbor;
        std::vector<int> indices; // global indices, ascending
    };

    int num_ranks = 1;
    int num_unknowns = 0;
    std::vector<std::vector<int>> owned;
    std::vector<std::vector<int>> halo;
    std::vector<std::vector<Link>> recv;
    std::vector<std::vector<Link>> send;
    std::vector<int> owner; // global index -> rank

    /// Checks the ownership and halo invariants against `a`.
    void validate(const CsrMatrix &a) const;
};

/// Splits the grid into p contiguous strips of grid lines along y.
/// Strip heights differ by at most one line. Halo sets are derived from the
/// coupling pattern of `a` (which must live on this grid).
Partition partition_1d_strips(const StructuredGrid &grid, int p, const CsrMatrix &a);
/// Same, for the 5-point stencil on `grid`.
Partition partition_1d_strips(const StructuredGrid &grid, int p);

/// Generic partition from an owner map and the coupling pattern of `a`.
Partition make_partition(const CsrMatrix &a, std::vector<int> owner, int num_ranks);

struct LocalSystem {
    CsrMatrix a_ff; ///< principal submatrix on the owned rows
    CsrMatrix a_fh; ///< couplings from owned rows to halo entries (columns follow `halo` order)
};

LocalSystem extract_local_system(const CsrMatrix &a, const Partition &part, int rank);

/// Restricts a global vector to a rank's owned entries.
Vector gather_owned(std::span<const double> global, const Partition &part, int rank);

enum class RhsMode { ones_solution, random };

struct RhsResult {
    Vector b;
    Vector x_exact; ///< empty for the random mode
};

/// b = A·1 (known solution of all ones) or uniform random in [−1, 1] from `seed`.
RhsResult make_rhs(const CsrMatrix &a, RhsMode mode, std::uint64_t seed = 0);

} // namespace ftk
