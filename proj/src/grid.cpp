#include "ftk/grid.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "ftk/error.hpp"
#include "ftk/random.hpp"

namespace ftk {

void StructuredGrid::validate() const
{
    require(nx >= 2 && ny >= 2, "grid dims must be at least 2x2, got " + std::to_string(nx) + "x" +
                                    std::to_string(ny));
    require(h > 0, "grid spacing must be positive");
}

void Anisotropy::validate() const
{
    require(eps_x > 0 && eps_y > 0, "anisotropy coefficients must be positive");
}

CsrMatrix assemble_poisson(const StructuredGrid &grid, const Anisotropy &aniso)
{
    grid.validate();
    aniso.validate();
    const double s = 1.0 / (grid.h * grid.h);
    const double diag = (2.0 * aniso.eps_x + 2.0 * aniso.eps_y) * s;
    const double ox = -aniso.eps_x * s;
    const double oy = -aniso.eps_y * s;

    const int n = grid.size();
    std::vector<int> offsets(static_cast<std::size_t>(n) + 1, 0);
    std::vector<int> cols;
    std::vector<double> vals;
    cols.reserve(static_cast<std::size_t>(5 * n));
    vals.reserve(static_cast<std::size_t>(5 * n));
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            // Ascending column order: south, west, centre, east, north.
            if (j > 0) cols.push_back(grid.index(i, j - 1)), vals.push_back(oy);
            if (i > 0) cols.push_back(grid.index(i - 1, j)), vals.push_back(ox);
            cols.push_back(grid.index(i, j)), vals.push_back(diag);
            if (i + 1 < grid.nx) cols.push_back(grid.index(i + 1, j)), vals.push_back(ox);
            if (j + 1 < grid.ny) cols.push_back(grid.index(i, j + 1)), vals.push_back(oy);
            offsets[grid.index(i, j) + 1] = static_cast<int>(cols.size());
        }
    return CsrMatrix(n, n, std::move(offsets), std::move(cols), std::move(vals));
}

Partition make_partition(const CsrMatrix &a, std::vector<int> owner, int num_ranks)
{
    require(num_ranks >= 1, "partition needs at least one rank");
    require_dims(owner.size() == static_cast<std::size_t>(a.rows()) && a.rows() == a.cols(),
                 "partition: owner map does not match matrix");
    Partition part;
    part.num_ranks = num_ranks;
    part.num_unknowns = a.rows();
    part.owned.assign(num_ranks, {});
    part.halo.assign(num_ranks, {});
    part.recv.assign(num_ranks, {});
    part.send.assign(num_ranks, {});
    for (int g = 0; g < a.rows(); ++g) {
        require(owner[g] >= 0 && owner[g] < num_ranks, "partition: owner out of range");
        part.owned[owner[g]].push_back(g);
    }

    for (int r = 0; r < num_ranks; ++r) {
        std::set<int> halo;
        for (int g : part.owned[r])
            for (int c : a.row_cols(g))
                if (owner[c] != r) halo.insert(c);
        part.halo[r].assign(halo.begin(), halo.end());

        std::map<int, std::vector<int>> by_owner;
        for (int g : part.halo[r]) by_owner[owner[g]].push_back(g);
        for (auto &[nb, idx] : by_owner) part.recv[r].push_back({nb, std::move(idx)});
    }
    // What r sends to q is exactly what q receives from r.
    for (int q = 0; q < num_ranks; ++q)
        for (const auto &link : part.recv[q]) part.send[link.neighbor].push_back({q, link.indices});
    for (auto &links : part.send)
        std::sort(links.begin(), links.end(),
                  [](const auto &x, const auto &y) { return x.neighbor < y.neighbor; });

    part.owner = std::move(owner);
    return part;
}

Partition partition_1d_strips(const StructuredGrid &grid, int p, const CsrMatrix &a)
{
    grid.validate();
    if (p < 1 || p > grid.ny)
        throw InvalidPartition("invalid partition: " + std::to_string(p) + " strips for " +
                               std::to_string(grid.ny) + " grid lines");
    require_dims(a.rows() == grid.size(), "partition: matrix does not live on this grid");
    std::vector<int> owner(static_cast<std::size_t>(grid.size()));
    const int base = grid.ny / p;
    const int extra = grid.ny % p;
    int line = 0;
    for (int r = 0; r < p; ++r) {
        const int height = base + (r < extra ? 1 : 0);
        for (int j = line; j < line + height; ++j)
            for (int i = 0; i < grid.nx; ++i) owner[grid.index(i, j)] = r;
        line += height;
    }
    return make_partition(a, std::move(owner), p);
}

Partition partition_1d_strips(const StructuredGrid &grid, int p)
{
    return partition_1d_strips(grid, p, assemble_poisson(grid));
}

void Partition::validate(const CsrMatrix &a) const
{
    std::vector<int> seen(static_cast<std::size_t>(num_unknowns), -1);
    for (int r = 0; r < num_ranks; ++r)
        for (int g : owned[r]) {
            require(seen[g] < 0, "partition: index owned twice");
            seen[g] = r;
        }
    for (int g = 0; g < num_unknowns; ++g) require(seen[g] >= 0, "partition: index not owned");
    for (int r = 0; r < num_ranks; ++r) {
        std::set<int> coupled;
        for (int g : owned[r])
            for (int c : a.row_cols(g))
                if (seen[c] != r) coupled.insert(c);
        require(std::vector<int>(coupled.begin(), coupled.end()) == halo[r],
                "partition: halo does not match operator coupling");
    }
}

LocalSystem extract_local_system(const CsrMatrix &a, const Partition &part, int rank)
{
    require(rank >= 0 && rank < part.num_ranks, "extract_local_system: rank out of range");
    const auto &owned = part.owned[rank];
    const auto &halo = part.halo[rank];
    std::vector<int> local_of(static_cast<std::size_t>(a.cols()), -1);
    std::vector<int> halo_of(static_cast<std::size_t>(a.cols()), -1);
    for (std::size_t k = 0; k < owned.size(); ++k) local_of[owned[k]] = static_cast<int>(k);
    for (std::size_t k = 0; k < halo.size(); ++k) halo_of[halo[k]] = static_cast<int>(k);

    std::vector<Triplet> ff, fh;
    for (std::size_t k = 0; k < owned.size(); ++k) {
        const int g = owned[k];
        const auto rc = a.row_cols(g);
        const auto rv = a.row_values(g);
        for (std::size_t e = 0; e < rc.size(); ++e) {
            if (local_of[rc[e]] >= 0)
                ff.push_back({static_cast<int>(k), local_of[rc[e]], rv[e]});
            else if (halo_of[rc[e]] >= 0)
                fh.push_back({static_cast<int>(k), halo_of[rc[e]], rv[e]});
            else
                throw InvalidArgument("extract_local_system: coupling outside halo");
        }
    }
    const int n = static_cast<int>(owned.size());
    return {CsrMatrix::from_triplets(n, n, std::move(ff)),
            CsrMatrix::from_triplets(n, static_cast<int>(halo.size()), std::move(fh))};
}

Vector gather_owned(std::span<const double> global, const Partition &part, int rank)
{
    Vector out;
    out.reserve(part.owned[rank].size());
    for (int g : part.owned[rank]) out.push_back(global[g]);
    return out;
}

RhsResult make_rhs(const CsrMatrix &a, RhsMode mode, std::uint64_t seed)
{
    RhsResult out;
    if (mode == RhsMode::ones_solution) {
        out.x_exact.assign(static_cast<std::size_t>(a.cols()), 1.0);
        out.b = spmv(a, out.x_exact);
    } else {
        Rng rng(seed);
        out.b.resize(static_cast<std::size_t>(a.rows()));
        for (double &v : out.b) v = rng.uniform(-1.0, 1.0);
    }
    return out;
}

} // namespace ftk
