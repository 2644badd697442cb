#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <mutex>

#include "ftk/grid.hpp"
#include "ftk/sim/world.hpp"

using namespace ftk;
using namespace ftk::sim;

namespace {

std::vector<const Event *> events_of(const EventLog &log, std::string_view kind, int rank = -2)
{
    std::vector<const Event *> out;
    for (const auto &e : log.events())
        if (e.kind == kind && (rank == -2 || e.rank == rank)) out.push_back(&e);
    return out;
}

} // namespace

TEST_CASE("allreduce of ones on four ranks")
{
    World world(4);
    std::vector<double> seen(4, 0.0);
    auto res = world.run([&](RankContext &ctx) {
        seen[ctx.rank] = ctx.comm.fused_allreduce({1.0}).get().at(0);
    });
    for (double v : seen) CHECK(v == 4.0);
    CHECK(res.reductions == 1);
    CHECK(res.log.count("reduce") == 1);
    CHECK_FALSE(res.deadlock);
}

TEST_CASE("fused summands count as one reduction")
{
    World world(3);
    std::vector<std::vector<double>> seen(3);
    auto res = world.run([&](RankContext &ctx) {
        const double r = ctx.rank;
        seen[ctx.rank] = ctx.comm.fused_allreduce({r, 2.0 * r, 1.0}).get();
    });
    CHECK(res.reductions == 1);
    for (const auto &v : seen) CHECK(v == std::vector<double>{3.0, 6.0, 3.0});
}

TEST_CASE("two ranks, one reduction event")
{
    World world(2);
    auto res = world.run([](RankContext &ctx) { ctx.comm.fused_allreduce({0.5}).get(); });
    CHECK(res.log.count("reduce") == 1);
}

TEST_CASE("tree reduction is fixed pairwise ascending order")
{
    // ((a0 + a1) + (a2 + a3)) + a4 differs from a left fold for these values.
    const std::vector<double> vals{1e16, 1.0, -1e16, 1.0, 1.0};
    World world(5);
    double got = 0.0;
    world.run([&](RankContext &ctx) {
        const double r = ctx.comm.fused_allreduce({vals[ctx.rank]}).get()[0];
        if (ctx.rank == 0) got = r;
    });
    const double expect = ((vals[0] + vals[1]) + (vals[2] + vals[3])) + vals[4];
    CHECK(got == expect);
}

TEST_CASE("max reduction")
{
    World world(4);
    double got = 0;
    world.run([&](RankContext &ctx) {
        const double r = ctx.comm.fused_allreduce({double(ctx.rank * 3 % 4)}, {}, ReduceOp::max).get()[0];
        if (ctx.rank == 1) got = r;
    });
    CHECK(got == 3.0);
}

TEST_CASE("mismatched lengths raise a protocol error on every rank")
{
    World world(3);
    std::atomic<int> protocol{0};
    world.run([&](RankContext &ctx) {
        std::vector<double> v(ctx.rank == 1 ? 2 : 1, 1.0);
        try {
            ctx.comm.fused_allreduce(v).get();
        } catch (const ProtocolError &) {
            ++protocol;
        }
    });
    CHECK(protocol == 3);
}

TEST_CASE("victim dies before the boundary: survivors' tokens fail")
{
    World world(4);
    world.add_fault({1, FaultPlan::Trigger::iteration, 0, FaultPlan::Kind::hard});
    std::mutex mu;
    std::vector<int> victims;
    auto res = world.run([&](RankContext &ctx) {
        auto tok = ctx.comm.fused_allreduce({1.0});
        ctx.comm.fault_point(0);
        try {
            tok.get();
        } catch (const RankFailure &e) {
            std::lock_guard lk(mu);
            victims.push_back(e.victim());
        }
    });
    CHECK(victims == std::vector<int>{1, 1, 1});
    CHECK(res.outcomes[1].status == RankOutcome::Status::killed);
    CHECK(res.reductions == 0);
}

TEST_CASE("halo exchange on strips carries the owners' values")
{
    const StructuredGrid grid{8, 8, 1.0};
    SUBCASE("p = 1 is immediately ready and empty")
    {
        const auto part = partition_1d_strips(grid, 1);
        World world(1);
        bool ok = false;
        world.run([&](RankContext &ctx) {
            std::vector<double> x(64);
            auto tok = ctx.comm.halo_exchange(part, x);
            ok = tok.ready() && tok.get().empty();
        });
        CHECK(ok);
    }
    SUBCASE("p = 4, x = global index")
    {
        const auto part = partition_1d_strips(grid, 4);
        World world(4);
        std::vector<std::vector<double>> got(4);
        world.run([&](RankContext &ctx) {
            std::vector<double> x;
            for (int g : part.owned[ctx.rank]) x.push_back(g);
            got[ctx.rank] = ctx.comm.halo_exchange(part, x).get();
        });
        for (int r = 0; r < 4; ++r) {
            REQUIRE(got[r].size() == part.halo[r].size());
            for (std::size_t k = 0; k < got[r].size(); ++k) {
                CHECK(got[r][k] == part.halo[r][k]);
                CHECK(part.owner[part.halo[r][k]] != r);
            }
        }
        CHECK(got[0].size() == 8);
        CHECK(got[1].size() == 16);
    }
    SUBCASE("killed neighbor fails the token with its id")
    {
        const auto part = partition_1d_strips(grid, 4);
        World world(4);
        world.add_fault({2, FaultPlan::Trigger::iteration, 0, FaultPlan::Kind::hard});
        int culprit = -1;
        world.run([&](RankContext &ctx) {
            ctx.comm.fault_point(0);
            std::vector<double> x(part.owned[ctx.rank].size(), 1.0);
            try {
                ctx.comm.halo_exchange(part, x).get();
            } catch (const RankFailure &e) {
                if (ctx.rank == 1) culprit = e.victim();
            }
        });
        CHECK(culprit == 2);
    }
}

TEST_CASE("guard scope")
{
    SUBCASE("success leaves the epoch untouched")
    {
        World world(4);
        std::vector<int> epochs(4, -1);
        auto res = world.run([&](RankContext &ctx) {
            guard_scope(ctx.comm, [&] { ctx.comm.fused_allreduce({1.0}).get(); });
            epochs[ctx.rank] = ctx.comm.epoch();
        });
        CHECK(res.log.count("revoke") == 0);
        CHECK(epochs == std::vector<int>{0, 0, 0, 0});
    }
    SUBCASE("error on one rank is seen as revocation by the others")
    {
        World world(4);
        std::vector<std::string> what(4);
        auto res = world.run([&](RankContext &ctx) {
            try {
                guard_scope(ctx.comm, [&] {
                    if (ctx.rank == 2) throw Error("local failure");
                    ctx.comm.fused_allreduce({1.0}).get();
                });
                what[ctx.rank] = "ok";
            } catch (const Revoked &) {
                what[ctx.rank] = "revoked";
            } catch (const Error &) {
                what[ctx.rank] = "local";
            }
        });
        CHECK(what == std::vector<std::string>{"revoked", "revoked", "local", "revoked"});
        CHECK(res.log.count("revoke") == 1);
        CHECK_FALSE(res.deadlock);
    }
    SUBCASE("error on all ranks records a single revocation")
    {
        World world(4);
        std::atomic<int> raised{0};
        auto res = world.run([&](RankContext &ctx) {
            try {
                guard_scope(ctx.comm, [&] { throw Error("everyone fails"); });
            } catch (const Error &) {
                ++raised;
            }
        });
        CHECK(raised == 4);
        CHECK(res.log.count("revoke") == 1);
    }
}

TEST_CASE("shrink and respawn")
{
    SUBCASE("shrink keeps survivors with their rank numbers")
    {
        World world(4);
        world.add_fault({1, FaultPlan::Trigger::iteration, 0, FaultPlan::Kind::hard});
        std::vector<std::vector<int>> members(4);
        std::vector<int> epochs(4, -1);
        std::vector<double> sums(4, 0.0);
        world.run([&](RankContext &ctx) {
            try {
                guard_scope(ctx.comm, [&] {
                    ctx.comm.fault_point(0);
                    ctx.comm.fused_allreduce({1.0}).get();
                });
            } catch (const CommError &) {
                auto rc = ctx.comm.shrink();
                members[ctx.rank] = rc.comm.members();
                epochs[ctx.rank] = rc.comm.epoch();
                CHECK(rc.lost == std::vector<int>{1});
                sums[ctx.rank] = rc.comm.fused_allreduce({1.0}).get()[0];
            }
        });
        for (int r : {0, 2, 3}) {
            CHECK(members[r] == std::vector<int>{0, 2, 3});
            CHECK(epochs[r] == 1);
            CHECK(sums[r] == 3.0);
        }
    }
    SUBCASE("respawn substitutes a fresh rank")
    {
        World world(4);
        world.add_fault({1, FaultPlan::Trigger::iteration, 0, FaultPlan::Kind::hard});
        std::mutex mu;
        std::vector<int> fresh_ranks;
        std::vector<double> sums(4, 0.0);
        auto res = world.run([&](RankContext &ctx) {
            SimCommunicator comm = ctx.comm;
            if (!ctx.fresh) {
                try {
                    guard_scope(comm, [&] {
                        comm.fault_point(0);
                        comm.fused_allreduce({1.0}).get();
                    });
                    return;
                } catch (const CommError &) {
                    comm = comm.respawn().comm;
                }
            } else {
                std::lock_guard lk(mu);
                fresh_ranks.push_back(ctx.rank);
                CHECK(ctx.origin.has_value());
                CHECK(ctx.origin->respawned);
            }
            CHECK(comm.members() == std::vector<int>{0, 1, 2, 3});
            CHECK(comm.epoch() == 1);
            sums[ctx.rank] = comm.fused_allreduce({1.0}).get()[0];
        });
        CHECK(fresh_ranks == std::vector<int>{1});
        CHECK(sums == std::vector<double>{4, 4, 4, 4});
        CHECK(res.outcomes[1].incarnation == 1);
        CHECK(res.outcomes[1].status == RankOutcome::Status::completed);
    }
    SUBCASE("shrink on a healthy communicator is a protocol error")
    {
        World world(2);
        std::atomic<int> errors{0};
        world.run([&](RankContext &ctx) {
            try {
                ctx.comm.shrink();
            } catch (const ProtocolError &) {
                ++errors;
            }
        });
        CHECK(errors == 2);
    }
}

TEST_CASE("operations on a revoked epoch never complete")
{
    World world(3);
    std::atomic<int> revoked{0};
    world.run([&](RankContext &ctx) {
        if (ctx.rank == 0) ctx.comm.revoke();
        ctx.comm.fused_allreduce({1.0}).wait();
        try {
            ctx.comm.fused_allreduce({1.0}).get();
        } catch (const Revoked &) {
            ++revoked;
        }
    });
    CHECK(revoked == 3);
}

TEST_CASE("deadlock is diagnosed instead of hanging")
{
    World world(2);
    bool diagnosed = false;
    auto res = world.run([&](RankContext &ctx) {
        if (ctx.rank == 0) {
            try {
                ctx.comm.recv({{1, 7}}).get();
            } catch (const DeadlockDetected &) {
                diagnosed = true;
            }
        }
    });
    CHECK(diagnosed);
    CHECK(res.deadlock);
}

TEST_CASE("point to point messages match by source and tag")
{
    World world(3);
    std::vector<double> got;
    world.run([&](RankContext &ctx) {
        if (ctx.rank > 0) {
            const double v = 10.0 * ctx.rank;
            ctx.comm.send(0, 5, pack(std::span<const double>(&v, 1)));
        } else {
            auto msgs = ctx.comm.recv({{2, 5}, {1, 5}}).get();
            for (auto &m : msgs) got.push_back(unpack(m)[0]);
        }
    });
    CHECK(got == std::vector<double>{20.0, 10.0});
}

TEST_CASE("superstep-triggered hard fault leads to a revocation no earlier than the trigger")
{
    World world(4);
    world.add_fault({1, FaultPlan::Trigger::superstep, 3, FaultPlan::Kind::hard});
    auto res = world.run([&](RankContext &ctx) {
        try {
            guard_scope(ctx.comm, [&] {
                for (int i = 0; i < 10; ++i) ctx.comm.fused_allreduce({1.0}).get();
            });
        } catch (const CommError &) {
        }
    });
    const auto revokes = events_of(res.log, "revoke");
    REQUIRE(revokes.size() == 1);
    CHECK(revokes[0]->superstep >= 3);
    CHECK(res.outcomes[1].status == RankOutcome::Status::killed);
}

TEST_CASE("superstep-triggered soft fault is raised inside the victim")
{
    World world(3);
    world.add_fault({2, FaultPlan::Trigger::superstep, 2, FaultPlan::Kind::soft});
    std::vector<std::string> what(3);
    world.run([&](RankContext &ctx) {
        try {
            guard_scope(ctx.comm, [&] {
                for (int i = 0; i < 6; ++i) ctx.comm.fused_allreduce({1.0}).get();
            });
            what[ctx.rank] = "ok";
        } catch (const SoftFault &) {
            what[ctx.rank] = "soft";
        } catch (const Revoked &) {
            what[ctx.rank] = "revoked";
        }
    });
    CHECK(what == std::vector<std::string>{"revoked", "revoked", "soft"});
}

TEST_CASE("overlapped reduction ordering in the log")
{
    World world(2);
    auto res = world.run([&](RankContext &ctx) {
        auto tok = ctx.comm.fused_allreduce({1.0}, {"iter", true});
        ctx.comm.mark_work("apply", true);
        ctx.comm.mark_work("apply", false);
        tok.get();
    });
    for (int r = 0; r < 2; ++r) {
        std::vector<std::string> kinds;
        for (const auto &e : res.log.events())
            if (e.rank == r && (e.kind == "issue" || e.kind == "work_begin" || e.kind == "work_end" ||
                                e.kind == "harvest"))
                kinds.push_back(e.kind);
        CHECK(kinds == std::vector<std::string>{"issue", "work_begin", "work_end", "harvest"});
    }
}

TEST_CASE("completion token contract")
{
    auto tok = CompletionToken<int>::completed(7);
    CHECK(tok.valid());
    CHECK(tok.ready());
    CHECK(tok.get() == 7);
    CHECK_FALSE(tok.valid());
}

TEST_CASE("backups live in the holder's store and die with it")
{
    World world(3);
    world.add_fault({1, FaultPlan::Trigger::iteration, 5, FaultPlan::Kind::hard});
    std::optional<Bytes> at_one_before;
    bool lost = false;
    world.run([&](RankContext &ctx) {
        const double v = ctx.rank;
        const int dest = (ctx.rank + 1) % 3;
        CHECK(ctx.comm.place_backup(dest, pack(std::span<const double>(&v, 1))).get() == dest);
        ctx.comm.fused_allreduce({0.0}).get();
        if (ctx.rank == 1) at_one_before = ctx.comm.stored_backup(0);
        ctx.comm.fault_point(5);
        try {
            ctx.comm.fused_allreduce({0.0}).get();
        } catch (const RankFailure &) {
            lost = true;
        }
    });
    REQUIRE(at_one_before.has_value());
    CHECK(unpack(*at_one_before)[0] == 0.0);
    CHECK(lost);
}

namespace {

/// A small iterative program: allreduce loop with guard, shrink on failure.
SimulationResult liveness_run(int ranks, std::vector<FaultPlan> plans, Engine engine, std::uint64_t seed,
                              std::vector<double> *finals = nullptr)
{
    World world(ranks, seed, engine);
    std::vector<double> out(ranks, 0.0);
    auto res = run_simulation(
        world,
        [&](RankContext &ctx) {
            SimCommunicator comm = ctx.comm;
            double acc = ctx.rank;
            int it = 0;
            for (int attempts = 0; attempts < 8; ++attempts) {
                try {
                    guard_scope(comm, [&] {
                        for (; it < 12; ++it) {
                            comm.fault_point(it);
                            acc = comm.fused_allreduce({acc * 0.5 + 1.0}).get()[0] / comm.size();
                        }
                    });
                    out[ctx.rank] = acc;
                    return;
                } catch (const SoftFault &) {
                    comm = comm.shrink(true).comm;
                } catch (const CommError &) {
                    comm = comm.shrink().comm;
                }
            }
        },
        plans);
    if (finals) *finals = out;
    return res;
}

} // namespace

TEST_CASE("liveness: randomized fault plans always terminate")
{
    Rng rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const int ranks = 2 + static_cast<int>(rng.below(4));
        std::vector<FaultPlan> plans;
        const int nfaults = 1 + static_cast<int>(rng.below(2));
        std::vector<int> hard_victims;
        for (int f = 0; f < nfaults; ++f) {
            FaultPlan p;
            p.victim = static_cast<int>(rng.below(ranks));
            p.kind = rng.below(2) ? FaultPlan::Kind::hard : FaultPlan::Kind::soft;
            if (p.kind == FaultPlan::Kind::hard) {
                if (std::count(hard_victims.begin(), hard_victims.end(), p.victim)) continue;
                hard_victims.push_back(p.victim);
            }
            p.trigger = rng.below(2) ? FaultPlan::Trigger::iteration : FaultPlan::Trigger::superstep;
            p.at = rng.below(10);
            plans.push_back(p);
        }
        const auto engine = trial % 2 ? Engine::randomized : Engine::deterministic;
        const auto res = liveness_run(ranks, plans, engine, 100 + trial);
        CHECK_FALSE(res.deadlock);
        for (const auto &o : res.outcomes) CHECK(o.status != RankOutcome::Status::failed);
    }
}

TEST_CASE("determinism: identical inputs give identical logs")
{
    const std::vector<FaultPlan> plans{{2, FaultPlan::Trigger::iteration, 4, FaultPlan::Kind::hard}};
    std::vector<double> a, b;
    const auto r1 = liveness_run(4, plans, Engine::deterministic, 1, &a);
    const auto r2 = liveness_run(4, plans, Engine::deterministic, 1, &b);
    CHECK(r1.log.to_jsonl() == r2.log.to_jsonl());
    CHECK(a == b);
}

TEST_CASE("all engines agree on results")
{
    const std::vector<FaultPlan> plans{{0, FaultPlan::Trigger::iteration, 3, FaultPlan::Kind::soft}};
    std::vector<double> det, rnd, thr;
    const auto r1 = liveness_run(4, plans, Engine::deterministic, 5, &det);
    const auto r2 = liveness_run(4, plans, Engine::randomized, 5, &rnd);
    const auto r3 = liveness_run(4, plans, Engine::threaded, 5, &thr);
    CHECK(det == rnd);
    CHECK(det == thr);
    CHECK(r1.reductions == r3.reductions);
}

TEST_CASE("epochs strictly increase across reconstitutions")
{
    World world(4);
    world.add_fault({3, FaultPlan::Trigger::iteration, 1, FaultPlan::Kind::hard});
    world.add_fault({2, FaultPlan::Trigger::iteration, 3, FaultPlan::Kind::hard});
    std::vector<std::vector<int>> epochs(4);
    world.run([&](RankContext &ctx) {
        SimCommunicator comm = ctx.comm;
        int it = 0;
        for (;;) {
            try {
                guard_scope(comm, [&] {
                    for (; it < 6; ++it) {
                        comm.fault_point(it);
                        comm.fused_allreduce({1.0}).get();
                    }
                });
                return;
            } catch (const CommError &) {
                const int before = comm.epoch();
                comm = comm.shrink().comm;
                CHECK(comm.epoch() > before);
                epochs[ctx.rank].push_back(comm.epoch());
            }
        }
    });
    CHECK(epochs[0] == std::vector<int>{1, 2});
    CHECK(epochs[1] == std::vector<int>{1, 2});
}

TEST_CASE("event log serializes as JSON lines")
{
    World world(2);
    auto res = world.run([](RankContext &ctx) { ctx.comm.fused_allreduce({1.0}).get(); });
    const auto text = res.log.to_jsonl();
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(res.log.events().size()));
    CHECK(text.find("\"kind\":\"reduce\"") != std::string::npos);
    CHECK(text.find("\"superstep\":") != std::string::npos);
    CHECK(text.find("\"digest\":") != std::string::npos);
}
