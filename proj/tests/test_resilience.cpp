#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>

#include "ftk/error.hpp"
#include "ftk/resilience/resilient_solver.hpp"
#include "support.hpp"

using namespace ftk;
using namespace ftk::resilience;
using Outcome = ResilientResult::Outcome;

namespace {

/// 32x32, eps_y = 0.01, 16 ranks, ILU(0) blocks, random rhs.
const Problem &standard_problem()
{
    static const Problem p = Problem::poisson({32, 32, 1.0}, {1.0, 0.01}, RhsMode::random, 7, 16);
    return p;
}

DistributedSetup base_setup()
{
    DistributedSetup s;
    s.precond.kind = "ilu0";
    return s;
}

const DistributedResult &fault_free()
{
    static const DistributedResult r = distributed_solve(standard_problem(), base_setup());
    return r;
}

int fault_iteration()
{
    return static_cast<int>(std::lround(0.8 * fault_free().record.iterations));
}

sim::FaultPlan hard_at(int victim, int iteration)
{
    return {victim, sim::FaultPlan::Trigger::iteration, static_cast<std::uint64_t>(iteration),
            sim::FaultPlan::Kind::hard};
}

ResilientSetup scenario(Codec codec, Strategy strategy, std::vector<sim::FaultPlan> faults = {})
{
    ResilientSetup s;
    s.base = base_setup();
    s.codec = codec;
    s.policy.strategy = strategy;
    s.faults = std::move(faults);
    return s;
}

ResilientResult run_standard(Codec codec, Strategy strategy)
{
    return resilient_solve(standard_problem(), scenario(codec, strategy, {hard_at(3, fault_iteration())}));
}

} // namespace

TEST_CASE("the standard scenario converges in a modest number of iterations")
{
    const auto &ff = fault_free();
    CHECK(ff.record.converged);
    CHECK(ff.record.iterations > 5);
    CHECK(fault_iteration() < ff.record.iterations);
}

TEST_CASE("backup placement is circular")
{
    const std::vector<int> all = {0, 1, 2, 3};
    CHECK(backup_targets(2, all).front() == 3);
    CHECK(backup_targets(3, all).front() == 0);
    CHECK(backup_targets(3, all) == std::vector<int>{0, 1, 2});
    // a missing successor is skipped
    CHECK(backup_targets(1, {0, 1, 3}).front() == 3);
}

TEST_CASE("policy validation")
{
    RecoveryPolicy p;
    CHECK_NOTHROW(p.validate());
    p.backup_frequency = 0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = {};
    p.aux_tol = 0.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p.aux_tol = 1.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = {};
    p.aux_maxit = 0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    for (auto s : {Strategy::global_rollback, Strategy::local_restore, Strategy::local_auxiliary})
        CHECK(parse_strategy(to_string(s)) == s);
    CHECK_THROWS_AS(parse_strategy("rollback"), InvalidArgument);
    CHECK(parse_reconstitute("shrink") == Reconstitute::shrink);
}

TEST_CASE("fault plans naming a rank outside the world are rejected")
{
    CHECK_THROWS_AS(resilient_solve(standard_problem(), scenario(Codec::zero(), Strategy::local_restore,
                                                                 {hard_at(16, 3)})),
                    InvalidArgument);
}

TEST_CASE("without faults the hooks are pure observers")
{
    const auto &bare = fault_free();
    for (int f : {1, 3}) {
        CAPTURE(f);
        auto s = scenario(Codec::adaptive(), Strategy::local_restore);
        s.policy.backup_frequency = f;
        const auto res = resilient_solve(standard_problem(), s);
        CHECK(res.outcome == Outcome::converged);
        CHECK(res.x == bare.x);
        CHECK(res.record.reductions == bare.record.reductions);
        CHECK(res.record.iterations == bare.record.iterations);
        REQUIRE(res.record.history.size() == bare.record.history.size());
        for (std::size_t i = 0; i < bare.record.history.size(); ++i)
            CHECK(res.record.history[i].residual_norm == bare.record.history[i].residual_norm);
        // every rank backs up after each f-th unconverged iteration
        const int n = bare.record.iterations;
        const int per_rank = (n - 1) / f;
        CHECK(res.backups.size() == static_cast<std::size_t>(16 * per_rank));
        for (const auto &b : res.backups) {
            CHECK(b.iteration % f == 0);
            CHECK(b.iteration < n);
            CHECK(b.holder == (b.rank + 1) % 16);
        }
        CHECK(res.recoveries.empty());
        CHECK(std::all_of(res.on_exception_calls.begin(), res.on_exception_calls.end(),
                          [](int c) { return c == 0; }));
    }
}

TEST_CASE("adaptive codec with local restore costs at most three extra iterations")
{
    const auto res = run_standard(Codec::adaptive(1.0), Strategy::local_restore);
    CHECK(res.outcome == Outcome::recovered_converged);
    CHECK(res.iterations() <= fault_free().record.iterations + 3);
    CHECK(res.iterations() >= fault_free().record.iterations);
    // the recorded tau is the residual coupling
    for (const auto &b : res.backups) CHECK(b.tau > 0.0);
}

TEST_CASE("an exact backup restores the pre-fault residual")
{
    const auto res = run_standard(Codec::accuracy_bounded(1e-15), Strategy::local_restore);
    REQUIRE(res.outcome == Outcome::recovered_converged);
    const auto &hist = fault_free().record.history;
    const double ref = hist.front().residual_norm;
    const int k = fault_iteration();
    REQUIRE(!res.recoveries.empty());
    for (const auto &r : res.recoveries) {
        CHECK(r.iteration == k);
        CHECK(std::abs(r.residual_after - hist[k].residual_norm) <= 1e-12 * ref);
    }
    // the restart drops the search direction, so one iteration may be lost
    CHECK(res.iterations() <= fault_free().record.iterations + 1);
}

TEST_CASE("global rollback lands on the fault-free residual of the snapshot iteration")
{
    const double tau = 1e-6;
    auto s = scenario(Codec::accuracy_bounded(tau), Strategy::global_rollback, {hard_at(5, 0)});
    const auto &hist = fault_free().record.history;
    const auto &a = standard_problem().a;
    // | ‖b − A x̃‖ − ‖b − A x‖ | ≤ ‖A (x̃ − x)‖ ≤ ‖A‖_∞ · √n · τ
    double a_inf = 0.0;
    for (int i = 0; i < a.rows(); ++i) {
        double row = 0.0;
        for (double v : a.row_values(i)) row += std::abs(v);
        a_inf = std::max(a_inf, row);
    }
    const double bound = a_inf * std::sqrt(static_cast<double>(a.rows())) * tau;
    for (int k : {4, 9, fault_iteration()}) {
        CAPTURE(k);
        s.faults = {hard_at(5, k)};
        s.policy.backup_frequency = k % 2 == 0 ? 1 : 2; // k = 9 rolls back to 8
        const auto res = resilient_solve(standard_problem(), s);
        CHECK(res.converged());
        const int snap = k - k % s.policy.backup_frequency;
        REQUIRE(res.recoveries.size() == 16u);
        for (const auto &r : res.recoveries) {
            CHECK(r.snapshot_iteration == snap);
            CHECK(std::abs(r.residual_after - hist[snap].residual_norm) <= bound);
        }
    }
}

TEST_CASE("a backup guess never slows the auxiliary solve")
{
    const auto pb = Problem::poisson({32, 32, 1.0}, {1.0, 1.0}, RhsMode::random, 3, 4);
    auto base = base_setup();
    const int n = distributed_solve(pb, base).record.iterations;
    const int k = static_cast<int>(std::lround(0.8 * n));
    auto aux = [&](Codec c) {
        ResilientSetup s;
        s.base = base;
        s.codec = c;
        s.policy.strategy = Strategy::local_auxiliary;
        s.faults = {hard_at(1, k)};
        const auto res = resilient_solve(pb, s);
        REQUIRE(res.outcome == Outcome::recovered_converged);
        return res.aux_iterations();
    };
    const int zero = aux(Codec::zero());
    CHECK(zero > aux(Codec::accuracy_bounded(1e-6)));
    for (const auto &c : {Codec::accuracy_bounded(1e-2), Codec::accuracy_bounded(1e-4), Codec::adaptive(),
                          Codec::hierarchical(1)}) {
        CAPTURE(c.describe());
        CHECK(aux(c) <= zero);
    }
}

TEST_CASE("a fault before the first backup restarts the lost rank from zero")
{
    auto s = scenario(Codec::adaptive(), Strategy::local_restore, {hard_at(7, 4)});
    s.policy.backup_frequency = 1000;
    const auto res = resilient_solve(standard_problem(), s);
    CHECK(res.outcome == Outcome::recovered_converged);
    CHECK(res.backups.empty());
    CHECK(res.sim.log.count("fallback_zero") == 1);
    for (const auto &r : res.recoveries)
        if (r.failed) CHECK(r.snapshot_iteration == -1);
    CHECK(res.iterations() > fault_free().record.iterations);
}

TEST_CASE("recovery quality is monotone in backup accuracy")
{
    const int exact = run_standard(Codec::accuracy_bounded(1e-7), Strategy::local_restore).iterations();
    const int mid = run_standard(Codec::accuracy_bounded(1e-4), Strategy::local_restore).iterations();
    const int coarse = run_standard(Codec::accuracy_bounded(1e-2), Strategy::local_restore).iterations();
    const int none = run_standard(Codec::zero(), Strategy::local_restore).iterations();
    CHECK(exact <= mid);
    CHECK(mid <= coarse);
    CHECK(coarse <= none);
}

TEST_CASE("adaptive backups are smaller on aggregate than uncompressed ones")
{
    const auto res = run_standard(Codec::adaptive(), Strategy::local_restore);
    std::uint64_t raw = 0;
    for (const auto &b : res.backups) raw += b.uncompressed_len;
    REQUIRE(!res.backups.empty());
    CHECK(res.cumulative_backup_bytes() < raw);
    // header plus one row per iteration; the rate column is filled on backup iterations
    const auto csv = res.history_csv();
    CHECK(csv.rfind("iteration,residual_norm,reductions_cum,overlapped_cum,compression_rate,"
                    "cumulative_backup_bytes\n",
                    0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(res.record.history.size()) + 1);
}

TEST_CASE("the resilience log is JSON lines of the relevant events")
{
    const auto res = run_standard(Codec::adaptive(), Strategy::local_auxiliary);
    const auto log = res.log_jsonl();
    CHECK(log.find("\"kind\":\"kill\"") != std::string::npos);
    CHECK(log.find("\"kind\":\"recover\"") != std::string::npos);
    CHECK(log.find("\"kind\":\"aux_solve\"") != std::string::npos);
    CHECK(log.find("\"kind\":\"backup\"") != std::string::npos);
    CHECK(log.find("\"kind\":\"reduce\"") == std::string::npos);
    CHECK(res.aux_iterations() > 0);
}

TEST_CASE("a dead successor pushes the backup one rank further")
{
    // Kill rank 4 at successive supersteps until one lands between its
    // death and the next backup placement of rank 3.
    bool seen = false;
    for (std::uint64_t at = 1; at < 400 && !seen; ++at) {
        auto s = scenario(Codec::adaptive(), Strategy::local_restore,
                          {{4, sim::FaultPlan::Trigger::superstep, at, sim::FaultPlan::Kind::hard}});
        const auto res = resilient_solve(standard_problem(), s);
        CHECK(res.outcome != Outcome::failed);
        if (res.sim.log.count("place_fallback") == 0) continue;
        seen = true;
        CAPTURE(at);
        const bool rerouted = std::any_of(res.backups.begin(), res.backups.end(),
                                          [](const BackupRecord &b) { return b.rank == 3 && b.holder == 5; });
        CHECK(rerouted);
    }
    CHECK(seen);
}

TEST_CASE("on-exception callbacks run in registration order")
{
    std::mutex mu;
    std::vector<std::vector<char>> order(16);
    auto s = scenario(Codec::adaptive(), Strategy::local_restore, {hard_at(2, 6)});
    s.hooks.on_exception.push_back([&](const std::exception &, LoopContext &lc) {
        std::lock_guard lk(mu);
        order[lc.rank].push_back('a');
        return false;
    });
    s.hooks.on_exception.push_back([&](const std::exception &, LoopContext &lc) {
        std::lock_guard lk(mu);
        order[lc.rank].push_back('b');
        return false;
    });
    std::vector<std::vector<char>> backup_order(16);
    s.hooks.backup.push_back([&](LoopContext &lc) {
        std::lock_guard lk(mu);
        backup_order[lc.rank].push_back('x');
    });
    s.hooks.backup.push_back([&](LoopContext &lc) {
        std::lock_guard lk(mu);
        backup_order[lc.rank].push_back('y');
    });
    const auto res = resilient_solve(standard_problem(), s);
    CHECK(res.outcome == Outcome::recovered_converged);
    for (int r = 0; r < 16; ++r) {
        CAPTURE(r);
        // the killed incarnation never gets to handle anything; its replacement starts in recovery
        CHECK(order[r].empty() == (r == 2));
        for (std::size_t i = 0; i < order[r].size(); ++i) CHECK(order[r][i] == (i % 2 == 0 ? 'a' : 'b'));
        for (std::size_t i = 0; i < backup_order[r].size(); ++i)
            CHECK(backup_order[r][i] == (i % 2 == 0 ? 'x' : 'y'));
    }
}

TEST_CASE("an exception no callback accepts re-raises and fails the run")
{
    auto s = scenario(Codec::adaptive(), Strategy::local_restore, {hard_at(2, 6)});
    s.handle_comm_errors = false;
    const auto res = resilient_solve(standard_problem(), s);
    CHECK(res.outcome == Outcome::failed);
    CHECK(!res.diagnosis.empty());
    CHECK(res.recoveries.empty());
    // the survivors saw the failure and declined it
    CHECK(res.sim.log.count("on_exception") > 0);
}

TEST_CASE("a user callback can take over what the built-in handler refuses")
{
    auto s = scenario(Codec::adaptive(), Strategy::local_restore, {hard_at(2, 6)});
    s.handle_comm_errors = false;
    s.hooks.on_exception.push_back([](const std::exception &, LoopContext &) { return true; });
    const auto res = resilient_solve(standard_problem(), s);
    CHECK(res.outcome == Outcome::recovered_converged);
}

TEST_CASE("shrinking cannot bring back a lost rank")
{
    auto s = scenario(Codec::adaptive(), Strategy::local_restore, {hard_at(2, 6)});
    s.policy.reconstitute = Reconstitute::shrink;
    const auto res = resilient_solve(standard_problem(), s);
    CHECK(res.outcome == Outcome::failed);
    CHECK(res.diagnosis.find("shrunk") != std::string::npos);
}

TEST_CASE("a soft fault with shrink is recovered in place")
{
    auto s = scenario(Codec::adaptive(), Strategy::local_restore,
                      {{2, sim::FaultPlan::Trigger::iteration, 6, sim::FaultPlan::Kind::soft}});
    s.policy.reconstitute = Reconstitute::shrink;
    const auto res = resilient_solve(standard_problem(), s);
    CHECK(res.outcome == Outcome::recovered_converged);
}

TEST_CASE("killing every rank is a declared failure")
{
    std::vector<sim::FaultPlan> all;
    for (int r = 0; r < 16; ++r) all.push_back(hard_at(r, 5));
    const auto res = resilient_solve(standard_problem(), scenario(Codec::adaptive(), Strategy::local_restore, all));
    CHECK(res.outcome == Outcome::failed);
    CHECK(!res.diagnosis.empty());
}

TEST_CASE("property: every fault plan in the matrix terminates with a classified outcome")
{
    using T = sim::FaultPlan::Trigger;
    using K = sim::FaultPlan::Kind;
    int runs = 0;
    for (int victim : {0, 7, 15})
        for (auto trig : {T::iteration, T::superstep})
            for (std::uint64_t at : {0u, 3u, 11u})
                for (auto kind : {K::hard, K::soft}) {
                    CAPTURE(victim);
                    CAPTURE(static_cast<int>(trig));
                    CAPTURE(at);
                    CAPTURE(static_cast<int>(kind));
                    const auto res = resilient_solve(
                        standard_problem(),
                        scenario(Codec::adaptive(), Strategy::local_auxiliary, {{victim, trig, at, kind}}));
                    ++runs;
                    CHECK(!res.sim.deadlock);
                    CHECK(res.outcome != Outcome::failed);
                    if (kind == K::soft && res.sim.log.count("soft_fault") == 1) {
                        // one soft fault on one rank: every rank runs its handler once
                        for (int r = 0; r < 16; ++r) CHECK(res.on_exception_calls[r] == 1);
                    }
                }
    CHECK(runs >= 20);
}
