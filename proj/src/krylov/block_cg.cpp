#include "ftk/krylov/block_cg.hpp"

#include <cmath>
#include <sstream>

#include "ftk/dense.hpp"
#include "ftk/error.hpp"

namespace ftk::krylov {

namespace {

/// Active columns grouped by Gram block.
std::vector<std::vector<std::size_t>> group_active(const std::vector<std::size_t> &active,
                                                   const GramMatrix &pattern)
{
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t c : active) {
        if (!groups.empty() && pattern.in_pattern(groups.back().front(), c))
            groups.back().push_back(c);
        else
            groups.push_back({c});
    }
    return groups;
}

/// Σ_r X(r,i) Y(r,j) for every in-pattern pair of active columns, row order.
std::vector<double> gram_partials(const MultiVector &x, const MultiVector &y,
                                  const std::vector<std::vector<std::size_t>> &groups)
{
    std::vector<double> out;
    for (const auto &g : groups) {
        const std::size_t base = out.size();
        out.resize(base + g.size() * g.size(), 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto xr = x.row(r);
            const auto yr = y.row(r);
            for (std::size_t a = 0; a < g.size(); ++a)
                for (std::size_t b = 0; b < g.size(); ++b) out[base + a * g.size() + b] += xr[g[a]] * yr[g[b]];
        }
    }
    return out;
}

DenseMatrix unpack(std::span<const double> v, std::size_t off, std::size_t m)
{
    DenseMatrix d(m, m);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) d(a, b) = v[off + a * m + b];
    if (m > 1) // products of distinct columns are symmetric only up to rounding
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = a + 1; b < m; ++b) d(a, b) = d(b, a) = 0.5 * (d(a, b) + d(b, a));
    return d;
}

std::string describe(const std::vector<std::size_t> &g)
{
    std::ostringstream os;
    os << "block cg: Gram block of columns {";
    for (std::size_t i = 0; i < g.size(); ++i) os << (i ? "," : "") << g[i];
    os << "}";
    return os.str();
}

/// coefficient = pinv(lhs)·rhs; 1×1 blocks divide directly so the diagonal
/// mode reproduces scalar CG bit for bit.
DenseMatrix solve_block(const DenseMatrix &lhs, const DenseMatrix &rhs, double rel,
                        const std::vector<std::size_t> &g, const char *what)
{
    const std::size_t m = lhs.rows();
    for (double v : lhs.data())
        if (!std::isfinite(v)) throw Divergence(describe(g) + ": non-finite " + what);
    if (m == 1) {
        if (!(lhs(0, 0) > 0.0)) throw Breakdown(describe(g) + ": " + what + " is not positive");
        DenseMatrix c(1, 1);
        c(0, 0) = rhs(0, 0) / lhs(0, 0);
        return c;
    }
    const auto p = symmetric_pinv(lhs, rel);
    if (p.rank == 0) throw Breakdown(describe(g) + ": " + what + " is numerically zero");
    return multiply(p.matrix, rhs);
}

} // namespace

BlockResult block_solve(const CsrMatrix &a, const MultiVector &b, const Preconditioner &m,
                        const SolverConfig &solver, const BlockConfig &cfg, ReductionChannel &channel)
{
    solver.validate();
    const std::size_t n = static_cast<std::size_t>(a.rows());
    const std::size_t k = b.cols();
    require_dims(b.rows() == n, "block cg: right-hand side has wrong row count");
    require(cfg.rel_pinv > 0.0 && cfg.rel_pinv < 1.0, "block cg: rel_pinv must lie in (0, 1)");
    for (double v : b.data()) require(std::isfinite(v), "block cg: non-finite right-hand side");
    const GramMatrix pattern(k, cfg.mode, cfg.block_size);

    BlockResult res;
    res.x = MultiVector(n, k);
    res.columns.resize(k);
    MultiVector r = spmm_multi(a, res.x);
    for (std::size_t i = 0; i < n * k; ++i) r.data()[i] = b.data()[i] - r.data()[i];
    MultiVector z(n, k);
    m.apply(r, z);
    MultiVector p = z;
    MultiVector q(n, k);

    std::vector<std::size_t> active(k);
    for (std::size_t j = 0; j < k; ++j) active[j] = j;
    auto groups = group_active(active, pattern);

    const std::uint64_t setup_before = channel.counts().setup;
    auto rho_flat = gram_partials(z, r, groups);
    const std::size_t rho_len = rho_flat.size();
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += r(i, j) * r(i, j);
        rho_flat.push_back(s);
    }
    auto d0 = channel.dots(std::move(rho_flat), {"setup", false}).get();
    const std::uint64_t setup_count = channel.counts().setup - setup_before;

    std::vector<double> reference(k);
    // ρ for each group, in group order
    std::vector<DenseMatrix> rho;
    {
        std::size_t off = 0;
        for (const auto &g : groups) {
            rho.push_back(unpack(d0, off, g.size()));
            off += g.size() * g.size();
        }
    }
    for (std::size_t j = 0; j < k; ++j) {
        reference[j] = std::sqrt(d0[rho_len + j]);
        auto &rec = res.columns[j];
        rec.initial_residual = rec.final_residual = reference[j];
        rec.setup_reductions = setup_count;
        rec.vector_memory_units = memory_accounting(Variant::classic);
        if (solver.record_history) rec.history.push_back({0, reference[j], 0, 0});
    }

    // Columns that start at zero residual are already solved.
    auto still_active = [&](std::size_t j) { return reference[j] > 0.0; };
    {
        std::vector<std::size_t> keep;
        std::vector<DenseMatrix> rho_keep;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            std::vector<std::size_t> pos;
            for (std::size_t a2 = 0; a2 < groups[gi].size(); ++a2)
                if (still_active(groups[gi][a2])) pos.push_back(a2);
            if (pos.empty()) continue;
            DenseMatrix sub(pos.size(), pos.size());
            for (std::size_t x1 = 0; x1 < pos.size(); ++x1)
                for (std::size_t x2 = 0; x2 < pos.size(); ++x2) sub(x1, x2) = rho[gi](pos[x1], pos[x2]);
            rho_keep.push_back(std::move(sub));
            for (std::size_t a2 : pos) keep.push_back(groups[gi][a2]);
        }
        for (std::size_t j = 0; j < k; ++j)
            if (!still_active(j)) res.columns[j].converged = true;
        active = std::move(keep);
        groups = group_active(active, pattern);
        rho = std::move(rho_keep);
    }

    const std::uint64_t iter_before = channel.counts().iter;
    const sim::ReduceTag tag{"iter", false};
    while (!active.empty() && res.iterations < solver.maxit) {
        ++res.iterations;
        spmm_multi(a, p, q);
        auto pq_flat = channel.dots(gram_partials(p, q, groups), tag).get();

        std::vector<DenseMatrix> alpha;
        std::size_t off = 0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const auto &g = groups[gi];
            const DenseMatrix pq = unpack(pq_flat, off, g.size());
            off += g.size() * g.size();
            alpha.push_back(solve_block(pq, rho[gi], cfg.rel_pinv, g, "PᵀAP"));
        }
        // X += P α, R −= Q α over each group
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const auto &g = groups[gi];
            const auto &al = alpha[gi];
            for (std::size_t j2 = 0; j2 < g.size(); ++j2) {
                const std::size_t cj = g[j2];
                for (std::size_t b2 = 0; b2 < g.size(); ++b2) {
                    const double c = al(b2, j2);
                    const std::size_t cb = g[b2];
                    for (std::size_t i = 0; i < n; ++i) res.x(i, cj) += c * p(i, cb);
                    for (std::size_t i = 0; i < n; ++i) r(i, cj) += -c * q(i, cb);
                }
            }
        }
        m.apply(r, z);

        auto flat = gram_partials(z, r, groups);
        const std::size_t len = flat.size();
        for (std::size_t c : active) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += r(i, c) * r(i, c);
            flat.push_back(s);
        }
        const auto d = channel.dots(std::move(flat), tag).get();
        for (double v : d)
            if (!std::isfinite(v)) throw Divergence("block cg: non-finite inner product");
        const std::uint64_t iters_so_far = channel.counts().iter - iter_before;

        std::vector<char> frozen(k, 0);
        for (std::size_t a2 = 0; a2 < active.size(); ++a2) {
            const std::size_t c = active[a2];
            const double rn = std::sqrt(d[len + a2]);
            auto &rec = res.columns[c];
            rec.iterations = res.iterations;
            rec.final_residual = rn;
            rec.reductions = iters_so_far;
            if (solver.record_history) rec.history.push_back({res.iterations, rn, iters_so_far, 0});
            if (rn <= solver.tol * reference[c]) {
                rec.converged = true;
                frozen[c] = 1;
            }
        }

        // β = ρ⁺ ρ_new on the surviving columns of each group; P = Z + P β
        std::vector<std::size_t> next_active;
        std::vector<DenseMatrix> next_rho;
        off = 0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const auto &g = groups[gi];
            const DenseMatrix rho_new = unpack(d, off, g.size());
            off += g.size() * g.size();
            std::vector<std::size_t> pos;
            for (std::size_t a2 = 0; a2 < g.size(); ++a2)
                if (!frozen[g[a2]]) pos.push_back(a2);
            if (pos.empty()) continue;
            const std::size_t mm = pos.size();
            DenseMatrix old_sub(mm, mm), new_sub(mm, mm);
            std::vector<std::size_t> sub_cols(mm);
            for (std::size_t x1 = 0; x1 < mm; ++x1) {
                sub_cols[x1] = g[pos[x1]];
                for (std::size_t x2 = 0; x2 < mm; ++x2) {
                    old_sub(x1, x2) = rho[gi](pos[x1], pos[x2]);
                    new_sub(x1, x2) = rho_new(pos[x1], pos[x2]);
                }
            }
            if (mm == 1 && !(new_sub(0, 0) > 0.0))
                throw Breakdown(describe(sub_cols) + ": ZᵀR is not positive");
            const DenseMatrix beta = solve_block(old_sub, new_sub, cfg.rel_pinv, sub_cols, "ZᵀR");
            if (mm == 1) {
                const std::size_t c = sub_cols[0];
                const double bt = beta(0, 0);
                for (std::size_t i = 0; i < n; ++i) p(i, c) = z(i, c) + bt * p(i, c);
            } else {
                std::vector<double> row(mm);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t x2 = 0; x2 < mm; ++x2) {
                        double s = z(i, sub_cols[x2]);
                        for (std::size_t x1 = 0; x1 < mm; ++x1) s += p(i, sub_cols[x1]) * beta(x1, x2);
                        row[x2] = s;
                    }
                    for (std::size_t x2 = 0; x2 < mm; ++x2) p(i, sub_cols[x2]) = row[x2];
                }
            }
            next_rho.push_back(std::move(new_sub));
            for (std::size_t c : sub_cols) next_active.push_back(c);
        }
        active = std::move(next_active);
        groups = group_active(active, pattern);
        rho = std::move(next_rho);
    }

    res.converged = true;
    for (const auto &rec : res.columns) res.converged = res.converged && rec.converged;
    res.reductions = channel.counts().iter - iter_before;
    return res;
}

BlockResult block_solve(const CsrMatrix &a, const MultiVector &b, const Preconditioner &m,
                        const SolverConfig &solver, const BlockConfig &cfg)
{
    LocalReduction channel;
    return block_solve(a, b, m, solver, cfg, channel);
}

} // namespace ftk::krylov
