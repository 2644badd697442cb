#include "ftk/resilience/recovery.hpp"

#include <algorithm>
#include <cmath>

#include "ftk/krylov/cg.hpp"
#include "ftk/preconditioner.hpp"

namespace ftk::resilience {

std::string to_string(Strategy s)
{
    switch (s) {
    case Strategy::global_rollback: return "global_rollback";
    case Strategy::local_restore: return "local_restore";
    case Strategy::local_auxiliary: return "local_auxiliary";
    }
    return "?";
}

Strategy parse_strategy(const std::string &name)
{
    for (auto s : {Strategy::global_rollback, Strategy::local_restore, Strategy::local_auxiliary})
        if (to_string(s) == name) return s;
    throw InvalidArgument("unknown recovery strategy '" + name + "'");
}

std::string to_string(Reconstitute r) { return r == Reconstitute::respawn ? "respawn" : "shrink"; }

Reconstitute parse_reconstitute(const std::string &name)
{
    if (name == "respawn") return Reconstitute::respawn;
    if (name == "shrink") return Reconstitute::shrink;
    throw InvalidArgument("unknown reconstitution '" + name + "'");
}

void RecoveryPolicy::validate() const
{
    require(backup_frequency >= 1, "recovery: backup frequency must be >= 1");
    require(aux_tol > 0.0 && aux_tol < 1.0, "recovery: aux tolerance must lie in (0, 1)");
    require(aux_maxit >= 1, "recovery: aux maxit must be >= 1");
}

AuxResult solve_auxiliary(const CsrMatrix &a_ff, std::span<const double> rhs, Vector guess, double tol,
                          int maxit)
{
    require_dims(guess.size() == rhs.size() && rhs.size() == static_cast<std::size_t>(a_ff.rows()),
                 "aux solve: size mismatch");
    const JacobiPreconditioner m(a_ff);
    krylov::CsrOperator op(a_ff);
    krylov::LocalReduction channel;
    krylov::SolverConfig cfg;
    cfg.tol = tol;
    cfg.maxit = maxit;
    cfg.record_history = false;
    krylov::CgSolver solver(op, m, channel, cfg);
    const double ref = norm2(rhs);
    AuxResult out;
    if (ref == 0.0) {
        out.x.assign(rhs.size(), 0.0);
        out.converged = true;
        return out;
    }
    solver.start(rhs, std::move(guess), ref);
    solver.run();
    out.x = solver.state().x;
    out.iterations = solver.iteration();
    out.converged = solver.converged();
    return out;
}

std::vector<int> backup_targets(int rank, const std::vector<int> &members)
{
    std::vector<int> sorted = members;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> out;
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), rank);
    const auto start = static_cast<std::size_t>(it - sorted.begin());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        const int r = sorted[(start + k) % sorted.size()];
        if (r != rank) out.push_back(r);
    }
    return out;
}

} // namespace ftk::resilience
