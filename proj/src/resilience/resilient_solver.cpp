#include "ftk/resilience/resilient_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <tuple>

namespace ftk::resilience {

// ---------------------------------------------------------------------------
// problem

Problem Problem::poisson(const StructuredGrid &grid, const Anisotropy &aniso, RhsMode rhs, std::uint64_t seed,
                         int ranks)
{
    Problem p;
    p.grid = grid;
    p.aniso = aniso;
    p.a = assemble_poisson(grid, aniso);
    p.b = make_rhs(p.a, rhs, seed).b;
    p.part = partition_1d_strips(grid, ranks, p.a);
    return p;
}

std::optional<StructuredGrid> Problem::layout(int rank) const
{
    const auto n = static_cast<int>(part.owned.at(rank).size());
    if (n == 0 || n % grid.nx != 0) return std::nullopt;
    return StructuredGrid{grid.nx, n / grid.nx, grid.h};
}

Vector Problem::assemble(const std::vector<Vector> &segments) const
{
    Vector x(static_cast<std::size_t>(a.rows()), 0.0);
    for (int r = 0; r < num_ranks() && r < static_cast<int>(segments.size()); ++r) {
        const auto &own = part.owned[r];
        if (segments[r].size() != own.size()) continue;
        for (std::size_t k = 0; k < own.size(); ++k) x[own[k]] = segments[r][k];
    }
    return x;
}

namespace {

/// One rank's share of the distributed solve.
struct RankRun {
    RankRun(const Problem &pb, const DistributedSetup &setup, int rank, sim::SimCommunicator comm)
        : op(comm, pb.part, rank, extract_local_system(pb.a, pb.part, rank)),
          b(gather_owned(pb.b, pb.part, rank)),
          m(make_preconditioner(setup.precond, op.local().a_ff)),
          channel(comm),
          solver(op, *m, channel, setup.solver)
    {
    }

    void rebind(const sim::SimCommunicator &comm)
    {
        op.set_comm(comm);
        channel.set_comm(comm);
        solver.rebind(op, channel);
    }

    krylov::DistributedOperator op;
    Vector b;
    std::unique_ptr<Preconditioner> m;
    krylov::CommReduction channel;
    krylov::CgSolver solver;
};

struct RankFinal {
    bool written = false;
    int incarnation = 0;
    bool converged = false;
    krylov::ConvergenceRecord record;
};

/// Results written by rank threads.
struct Shared {
    explicit Shared(int p) : segments(p), finals(p), on_exception(p, 0), errors(p) {}

    std::mutex mu;
    std::vector<Vector> segments;
    std::vector<RankFinal> finals;
    std::vector<BackupRecord> backups;
    std::vector<RecoveryRecord> recoveries;
    std::vector<int> on_exception;
    std::vector<std::exception_ptr> errors;

    void finish(int rank, int incarnation, const krylov::CgSolver &solver)
    {
        std::lock_guard lk(mu);
        segments[rank] = solver.state().x;
        finals[rank] = {true, incarnation, solver.converged(), solver.record()};
    }
};

/// Record of the lowest rank that ran from the start, else of any rank.
krylov::ConvergenceRecord pick_record(const Shared &sh)
{
    for (const auto &f : sh.finals)
        if (f.written && f.incarnation == 0) return f.record;
    for (const auto &f : sh.finals)
        if (f.written) return f.record;
    return {};
}

std::string join(const std::vector<int> &v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

constexpr int backup_tag = 4242;

} // namespace

DistributedResult distributed_solve(const Problem &problem, const DistributedSetup &setup)
{
    setup.solver.validate();
    const int p = problem.num_ranks();
    Shared sh(p);
    sim::World world(p, setup.seed, setup.engine);
    DistributedResult out;
    out.sim = world.run([&](sim::RankContext &ctx) {
        try {
            RankRun run(problem, setup, ctx.rank, ctx.comm);
            run.solver.start(run.b, Vector(run.b.size(), 0.0));
            run.solver.run();
            sh.finish(ctx.rank, ctx.incarnation, run.solver);
        } catch (const Error &) {
            std::lock_guard lk(sh.mu);
            sh.errors[ctx.rank] = std::current_exception();
            throw;
        }
    });
    // Numerical failures are identical on every rank; report the first.
    for (const auto &e : sh.errors)
        if (e) std::rethrow_exception(e);
    out.x = problem.assemble(sh.segments);
    out.record = pick_record(sh);
    return out;
}

// ---------------------------------------------------------------------------
// hooks

void HookStacks::run_recovery(LoopContext &ctx) const
{
    for (const auto &h : recovery) h(ctx);
}

void HookStacks::run_backup(LoopContext &ctx) const
{
    for (const auto &h : backup) h(ctx);
}

bool HookStacks::run_on_exception(const std::exception &e, LoopContext &ctx) const
{
    bool handled = false;
    for (const auto &h : on_exception) handled = h(e, ctx) || handled;
    return handled;
}

// ---------------------------------------------------------------------------
// resilient driver

namespace {

/// Result of the collective step every rank runs before recovery.
struct Handshake {
    int iteration = -1;
    double reference = -1.0;
    std::vector<int> failed;
    bool self_failed = false;
    int snapshot_iteration = -1; ///< of the backup this rank recovers from
    std::optional<BackupSnapshot> fetched;
    bool consistent = true; ///< all restore points share one iteration
};

class RankDriver {
public:
    RankDriver(const Problem &pb, const ResilientSetup &st, Shared &sh, sim::RankContext &ctx)
        : pb_(pb), st_(st), sh_(sh), me_(ctx.rank), incarnation_(ctx.incarnation),
          comm_(ctx.fresh ? ctx.origin->comm : ctx.comm), run_(pb, st.base, me_, comm_)
    {
        if (ctx.fresh) {
            recovering_ = true;
            pending_.insert(me_);
            pending_.insert(ctx.origin->lost.begin(), ctx.origin->lost.end());
            pending_.insert(ctx.origin->faulted.begin(), ctx.origin->faulted.end());
        }
        build_hooks();
    }

    void run()
    {
        bool done = false;
        while (!done) {
            try {
                sim::Guard guard(comm_);
                if (!started_ && !recovering_) {
                    run_.solver.start(run_.b, Vector(run_.b.size(), 0.0));
                    started_ = true;
                }
                if (recovering_) recover();
                const int f = st_.policy.backup_frequency;
                while (!run_.solver.done()) {
                    comm_.fault_point(static_cast<std::uint64_t>(run_.solver.iteration()));
                    run_.solver.step();
                    if (!run_.solver.converged() && run_.solver.iteration() % f == 0) {
                        auto lc = context();
                        hooks_.run_backup(lc);
                    }
                }
                done = true;
            } catch (const Error &e) {
                handle(e);
            }
        }
        sh_.finish(me_, incarnation_, run_.solver);
    }

private:
    LoopContext context()
    {
        LoopContext lc;
        lc.rank = me_;
        lc.incarnation = incarnation_;
        lc.iteration = started_ ? run_.solver.iteration() : 0;
        lc.comm = &comm_;
        lc.solver = started_ ? &run_.solver : nullptr;
        return lc;
    }

    void handle(const Error &e)
    {
        auto lc = context();
        {
            std::lock_guard lk(sh_.mu);
            sh_.on_exception[me_] += 1;
        }
        comm_.log("on_exception", e.what());
        if (!hooks_.run_on_exception(e, lc)) throw;
        const bool local = dynamic_cast<const sim::SoftFault *>(&e) != nullptr;
        sim::Reconstitution rec = st_.policy.reconstitute == Reconstitute::respawn ? comm_.respawn(local)
                                                                                   : comm_.shrink(local);
        comm_ = rec.comm;
        run_.rebind(comm_);
        if (local) pending_.insert(me_);
        pending_.insert(rec.lost.begin(), rec.lost.end());
        pending_.insert(rec.faulted.begin(), rec.faulted.end());
        if (!rec.respawned && !rec.lost.empty())
            lost_without_replacement_ = true;
        recovering_ = true;
    }

    void recover()
    {
        if (lost_without_replacement_)
            throw RecoveryFailed("recovery: ranks were lost and the communicator was shrunk; their data "
                                 "cannot be restored");
        const Handshake hs = handshake();
        handshake_ = &hs;
        Vector x;
        auto lc = context();
        lc.iteration = std::max(hs.iteration, 0);
        lc.restart = &x;
        lc.failed = hs.failed;
        hooks_.run_recovery(lc);
        handshake_ = nullptr;
        require_dims(x.size() == run_.b.size(), "recovery: restart vector has wrong length");

        if (started_) {
            run_.solver.restart(std::move(x));
        } else {
            std::optional<double> ref;
            if (hs.reference > 0.0) ref = hs.reference;
            run_.solver.start(run_.b, std::move(x), ref, std::max(hs.iteration, 0));
            started_ = true;
        }
        last_recovery_.iteration = run_.solver.iteration();
        last_recovery_.residual_after = run_.solver.residual_norm();
        comm_.log("recover", "strategy=" + to_string(st_.policy.strategy) + " failed=" + join(hs.failed) +
                                 " self_failed=" + (hs.self_failed ? "1" : "0") + " snapshot=" +
                                 std::to_string(last_recovery_.snapshot_iteration) +
                                 " residual=" + fmt(last_recovery_.residual_after));
        {
            std::lock_guard lk(sh_.mu);
            sh_.recoveries.push_back(last_recovery_);
        }
        pending_.clear();
        recovering_ = false;
    }

    /// Max-reduction telling every rank the union of failed ranks, the solve
    /// progress, and who holds which backup; holders then ship the backups
    /// to the ranks that lost their data.
    Handshake handshake()
    {
        const int p = pb_.num_ranks();
        const bool self_failed = pending_.count(me_) > 0;
        constexpr double none = -1e300;
        std::vector<double> v(2 * static_cast<std::size_t>(p) + 4, none);
        for (int s = 0; s < p; ++s) {
            if (s == me_) continue;
            if (const auto stored = comm_.stored_backup(s)) {
                const auto snap = BackupSnapshot::deserialize(*stored);
                v[s] = static_cast<double>(snap.iteration + 1) * p + me_;
            }
        }
        for (int s : pending_) v[p + s] = 1.0;
        v[2 * p] = started_ ? run_.solver.iteration() : -1.0;
        v[2 * p + 1] = started_ ? run_.solver.reference_norm() : -1.0;
        if (!self_failed) {
            const double own = own_ ? own_->iteration : -1.0;
            v[2 * p + 2] = own;
            v[2 * p + 3] = -own;
        }
        const auto d = comm_.fused_allreduce(v, {"setup", false}, sim::ReduceOp::max).get();

        Handshake hs;
        hs.self_failed = self_failed;
        hs.iteration = static_cast<int>(d[2 * p]);
        hs.reference = d[2 * p + 1];
        std::vector<int> holder(p, -1), held_iter(p, -1);
        for (int s = 0; s < p; ++s) {
            if (d[p + s] > 0.0) hs.failed.push_back(s);
            if (d[s] >= p) {
                const auto code = static_cast<long long>(d[s]);
                holder[s] = static_cast<int>(code % p);
                held_iter[s] = static_cast<int>(code / p) - 1;
            }
        }
        // Restore points: own snapshots on intact ranks, remote ones for failed ranks.
        std::vector<int> points;
        if (d[2 * p + 2] != none) {
            points.push_back(static_cast<int>(d[2 * p + 2]));
            points.push_back(static_cast<int>(-d[2 * p + 3]));
        }
        for (int s : hs.failed) points.push_back(holder[s] >= 0 ? held_iter[s] : -1);
        hs.consistent = std::adjacent_find(points.begin(), points.end(), std::not_equal_to<>()) == points.end();

        for (int s : hs.failed) {
            if (holder[s] == me_) {
                comm_.send(s, backup_tag, *comm_.stored_backup(s));
                comm_.log("backup_handover", "to=" + std::to_string(s) + " iteration=" +
                                                 std::to_string(held_iter[s]));
            }
        }
        if (self_failed) {
            if (holder[me_] >= 0) {
                auto got = comm_.recv({{holder[me_], backup_tag}}).get();
                hs.fetched = BackupSnapshot::deserialize(got.at(0));
                hs.snapshot_iteration = hs.fetched->iteration;
            } else {
                comm_.log("fallback_zero", "no backup of rank " + std::to_string(me_) + " survived");
            }
        } else if (own_) {
            hs.snapshot_iteration = own_->iteration;
        }
        comm_.log("handshake", "failed=" + join(hs.failed) + " iteration=" + std::to_string(hs.iteration) +
                                   " consistent=" + (hs.consistent ? "1" : "0"));
        return hs;
    }

    Vector current_x() const
    {
        if (started_) return run_.solver.state().x;
        return Vector(run_.b.size(), 0.0);
    }

    void builtin_recovery(LoopContext &lc)
    {
        const Handshake &hs = *handshake_;
        const std::size_t n = run_.b.size();
        last_recovery_ = RecoveryRecord{};
        last_recovery_.rank = me_;
        last_recovery_.failed = hs.self_failed;
        last_recovery_.snapshot_iteration = -1;
        Vector restored(n, 0.0);
        if (hs.self_failed && hs.fetched) {
            restored = decode(*hs.fetched);
            last_recovery_.snapshot_iteration = hs.fetched->iteration;
        }
        switch (st_.policy.strategy) {
        case Strategy::global_rollback:
            if (hs.consistent && !hs.self_failed && own_) {
                *lc.restart = decode(*own_);
                last_recovery_.snapshot_iteration = own_->iteration;
            } else if (hs.consistent && hs.self_failed) {
                *lc.restart = std::move(restored);
            } else {
                if (!hs.consistent) comm_.log("rollback_mismatch", "restore points differ; restarting from zero");
                *lc.restart = Vector(n, 0.0);
                last_recovery_.snapshot_iteration = -1;
            }
            break;
        case Strategy::local_restore:
            *lc.restart = hs.self_failed ? std::move(restored) : current_x();
            break;
        case Strategy::local_auxiliary: {
            Vector guess = hs.self_failed ? std::move(restored) : current_x();
            const auto halo = comm_.halo_exchange(pb_.part, guess).get();
            if (hs.self_failed) {
                const auto &sys = run_.op.local();
                Vector rhs = run_.b;
                if (!halo.empty()) {
                    Vector coupling(n);
                    spmv(sys.a_fh, halo, coupling);
                    for (std::size_t i = 0; i < n; ++i) rhs[i] -= coupling[i];
                }
                auto aux = solve_auxiliary(sys.a_ff, rhs, std::move(guess), st_.policy.aux_tol, st_.policy.aux_maxit);
                last_recovery_.aux_iterations = aux.iterations;
                last_recovery_.aux_converged = aux.converged;
                comm_.log("aux_solve", "iterations=" + std::to_string(aux.iterations) +
                                           " converged=" + (aux.converged ? "1" : "0"));
                if (!aux.converged)
                    throw RecoveryFailed("recovery: auxiliary problem on rank " + std::to_string(me_) +
                                         " did not converge in " + std::to_string(aux.iterations) + " iterations");
                *lc.restart = std::move(aux.x);
            } else {
                *lc.restart = std::move(guess);
            }
            break;
        }
        }
    }

    void builtin_backup(LoopContext &lc)
    {
        const auto &solver = *lc.solver;
        BackupSnapshot snap = encode(st_.codec, solver.state().x, solver.residual_norm(), pb_.layout(me_));
        snap.source = me_;
        snap.iteration = lc.iteration;
        const auto wire = snap.serialize();
        int holder = -1;
        for (int t : backup_targets(me_, comm_.members())) {
            auto tok = comm_.place_backup(t, wire);
            try {
                tok.get();
                holder = t;
                break;
            } catch (const sim::RankFailure &) {
                comm_.log("place_fallback", "dest=" + std::to_string(t) + " is dead");
            }
        }
        comm_.log("backup",
                  "iteration=" + std::to_string(snap.iteration) + " holder=" + std::to_string(holder) +
                      " tau=" + fmt(snap.tau) + " bytes=" + std::to_string(snap.payload_len()) +
                      " rate=" + fmt(snap.compression_rate()),
                  sim::digest(std::span<const std::uint8_t>(snap.payload)));
        {
            std::lock_guard lk(sh_.mu);
            sh_.backups.push_back({me_, snap.iteration, holder, snap.tau, snap.uncompressed_len(), snap.payload_len()});
        }
        own_ = std::move(snap);
    }

    static bool builtin_on_exception(const std::exception &e, LoopContext &)
    {
        if (dynamic_cast<const sim::DeadlockDetected *>(&e) || dynamic_cast<const sim::ProtocolError *>(&e))
            return false;
        return dynamic_cast<const sim::CommError *>(&e) || dynamic_cast<const sim::SoftFault *>(&e);
    }

    void build_hooks()
    {
        hooks_.recovery.push_back([this](LoopContext &lc) { builtin_recovery(lc); });
        hooks_.backup.push_back([this](LoopContext &lc) { builtin_backup(lc); });
        if (st_.handle_comm_errors) hooks_.on_exception.push_back(builtin_on_exception);
        for (const auto &h : st_.hooks.recovery) hooks_.recovery.push_back(h);
        for (const auto &h : st_.hooks.backup) hooks_.backup.push_back(h);
        for (const auto &h : st_.hooks.on_exception) hooks_.on_exception.push_back(h);
    }

    const Problem &pb_;
    const ResilientSetup &st_;
    Shared &sh_;
    int me_;
    int incarnation_;
    sim::SimCommunicator comm_;
    RankRun run_;
    HookStacks hooks_;
    bool started_ = false;
    bool recovering_ = false;
    bool lost_without_replacement_ = false;
    std::set<int> pending_;
    std::optional<BackupSnapshot> own_;
    const Handshake *handshake_ = nullptr;
    RecoveryRecord last_recovery_;
};

} // namespace

std::string to_string(ResilientResult::Outcome o)
{
    switch (o) {
    case ResilientResult::Outcome::converged: return "converged";
    case ResilientResult::Outcome::recovered_converged: return "recovered_converged";
    case ResilientResult::Outcome::failed: return "failed";
    }
    return "?";
}

ResilientResult resilient_solve(const Problem &problem, const ResilientSetup &setup)
{
    setup.base.solver.validate();
    setup.codec.validate();
    setup.policy.validate();
    const int p = problem.num_ranks();
    for (const auto &f : setup.faults)
        require(f.victim >= 0 && f.victim < p, "fault plan victim " + std::to_string(f.victim) + " out of range");

    Shared sh(p);
    sim::World world(p, setup.base.seed, setup.base.engine);
    for (const auto &f : setup.faults) world.add_fault(f);
    ResilientResult out;
    out.sim = world.run([&](sim::RankContext &ctx) {
        RankDriver driver(problem, setup, sh, ctx);
        driver.run();
    });

    out.x = problem.assemble(sh.segments);
    out.record = pick_record(sh);
    out.backups = std::move(sh.backups);
    out.recoveries = std::move(sh.recoveries);
    out.on_exception_calls = sh.on_exception;
    auto by_iter = [](const auto &a, const auto &b) {
        return std::tie(a.iteration, a.rank) < std::tie(b.iteration, b.rank);
    };
    std::stable_sort(out.backups.begin(), out.backups.end(), by_iter);
    std::stable_sort(out.recoveries.begin(), out.recoveries.end(), by_iter);

    std::ostringstream why;
    bool ok = !out.sim.deadlock;
    if (out.sim.deadlock) why << "deadlock detected; ";
    for (int r = 0; r < p; ++r) {
        const auto &o = out.sim.outcomes[r];
        if (o.status == sim::RankOutcome::Status::completed) {
            if (!sh.finals[r].converged) {
                ok = false;
                why << "rank " << r << ": not converged within maxit; ";
            }
        } else {
            ok = false;
            why << "rank " << r << (o.status == sim::RankOutcome::Status::killed ? ": lost" : ": " + o.error)
                << "; ";
        }
    }
    const bool faulted = out.sim.log.count("kill") > 0 || out.sim.log.count("soft_fault") > 0 ||
                         !out.recoveries.empty();
    out.outcome = !ok ? ResilientResult::Outcome::failed
                  : faulted ? ResilientResult::Outcome::recovered_converged
                            : ResilientResult::Outcome::converged;
    out.diagnosis = why.str();
    if (!out.diagnosis.empty()) out.diagnosis.resize(out.diagnosis.size() - 2);
    return out;
}

std::uint64_t ResilientResult::cumulative_backup_bytes() const
{
    std::uint64_t s = 0;
    for (const auto &b : backups) s += b.payload_len;
    return s;
}

int ResilientResult::aux_iterations() const
{
    int s = 0;
    for (const auto &r : recoveries)
        if (r.aux_iterations > 0) s += r.aux_iterations;
    return s;
}

std::string ResilientResult::history_csv() const
{
    std::map<int, std::pair<std::uint64_t, std::uint64_t>> per_iter; // uncompressed, payload
    for (const auto &b : backups) {
        auto &e = per_iter[b.iteration];
        e.first += b.uncompressed_len;
        e.second += b.payload_len;
    }
    std::ostringstream os;
    os << "iteration,residual_norm,reductions_cum,overlapped_cum,compression_rate,cumulative_backup_bytes\n";
    std::uint64_t cum = 0;
    auto it = per_iter.begin();
    for (const auto &h : record.history) {
        std::string rate;
        while (it != per_iter.end() && it->first <= h.iteration) {
            if (it->first == h.iteration && it->second.second > 0)
                rate = fmt(static_cast<double>(it->second.first) / static_cast<double>(it->second.second));
            cum += it->second.second;
            ++it;
        }
        os << h.iteration << ',' << fmt(h.residual_norm) << ',' << h.reductions_cum << ',' << h.overlapped_cum
           << ',' << rate << ',' << cum << '\n';
    }
    return os.str();
}

std::string ResilientResult::log_jsonl() const
{
    static const std::set<std::string> kinds = {
        "backup", "place_fallback", "kill", "soft_fault", "revoke", "on_exception", "shrink", "respawn",
        "handshake", "backup_handover", "fallback_zero", "rollback_mismatch", "aux_solve", "recover", "deadlock"};
    sim::EventLog filtered;
    for (const auto &e : sim.log.events())
        if (kinds.count(e.kind)) filtered.append(e);
    return filtered.to_jsonl();
}

} // namespace ftk::resilience
