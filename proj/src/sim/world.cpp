#include "ftk/sim/world.hpp"

#include <algorithm>
#include <cstring>
#include <exception>

#include <json.hpp>

namespace ftk::sim {

namespace {

thread_local void *t_actor = nullptr;

} // namespace

std::uint64_t digest(std::span<const std::uint8_t> bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t digest(std::span<const double> values)
{
    return digest(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t *>(values.data()), values.size() * sizeof(double)));
}

Bytes pack(std::span<const double> values)
{
    Bytes out(values.size() * sizeof(double));
    if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
    return out;
}

std::vector<double> unpack(const Bytes &bytes)
{
    if (bytes.size() % sizeof(double) != 0) throw ProtocolError("unpack: payload is not a double array");
    std::vector<double> out(bytes.size() / sizeof(double));
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

std::size_t EventLog::count(std::string_view kind) const
{
    return static_cast<std::size_t>(
        std::count_if(events_.begin(), events_.end(), [&](const Event &e) { return e.kind == kind; }));
}

std::string EventLog::to_jsonl() const
{
    std::string out;
    for (const auto &e : events_) {
        nlohmann::ordered_json j;
        j["superstep"] = e.superstep;
        j["rank"] = e.rank;
        j["kind"] = e.kind;
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(e.digest));
        j["digest"] = buf;
        if (!e.detail.empty()) j["detail"] = e.detail;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void detail::SlotBase::rethrow() const
{
    switch (failure) {
    case FailureKind::rank_failure: throw RankFailure(culprit, reason);
    case FailureKind::revoked: throw Revoked(reason);
    case FailureKind::protocol: throw ProtocolError(reason);
    case FailureKind::deadlock: throw DeadlockDetected(reason);
    case FailureKind::none: break;
    }
    throw CommError(reason.empty() ? "operation failed" : reason);
}

void detail::block_on(World &world, SlotBase &slot)
{
    std::unique_lock lk(world.mu_);
    auto *actor = static_cast<World::Actor *>(t_actor);
    if (!actor) throw ProtocolError("blocking wait outside a rank program");
    world.block_locked(lk, *actor, slot);
}

TokenState detail::query(World &world, const SlotBase &slot)
{
    std::lock_guard lk(world.mu_);
    return slot.state;
}

void detail::harvested(World &world, const SlotBase &slot)
{
    std::lock_guard lk(world.mu_);
    world.log_locked(slot.owner, "harvest", 0, "op=" + std::to_string(slot.op_id));
}

World::World(int num_ranks, std::uint64_t seed, Engine engine)
    : num_ranks_(num_ranks), engine_(engine), rng_(seed)
{
    require(num_ranks >= 1, "World: need at least one rank");
    ranks_.resize(static_cast<std::size_t>(num_ranks));
    stores_.resize(static_cast<std::size_t>(num_ranks));
}

World::~World()
{
    for (auto &t : threads_)
        if (t.joinable()) t.join();
}

void World::add_fault(const FaultPlan &plan)
{
    require(plan.victim >= 0 && plan.victim < num_ranks_, "FaultPlan: victim out of range");
    if (plan.kind == FaultPlan::Kind::hard)
        for (const auto &p : plans_)
            require(!(p.kind == FaultPlan::Kind::hard && p.victim == plan.victim),
                    "FaultPlan: at most one hard fault per victim");
    plans_.push_back(plan);
    plan_used_.push_back(false);
}

SimulationResult World::run(RankProgram program)
{
    require(!program_, "World::run: a world runs once");
    require(static_cast<bool>(program), "World::run: empty program");
    program_ = std::move(program);
    {
        std::unique_lock lk(mu_);
        std::vector<int> all(static_cast<std::size_t>(num_ranks_));
        for (int r = 0; r < num_ranks_; ++r) all[r] = r;
        const int comm = new_comm_locked(all, 0);
        for (int r = 0; r < num_ranks_; ++r) {
            RankContext ctx;
            ctx.rank = r;
            ctx.comm = SimCommunicator(this, comm, r);
            spawn_locked(std::move(ctx));
        }
        schedule_locked();
        done_cv_.wait(lk, [&] { return done_; });
    }
    for (auto &t : threads_) t.join();
    threads_.clear();

    SimulationResult res;
    res.log = log_;
    res.deadlock = deadlock_;
    res.supersteps = superstep_;
    res.reductions = reductions_;
    for (const auto &slot : ranks_) res.outcomes.push_back(actors_[slot.actor]->outcome);
    return res;
}

SimulationResult run_simulation(World &world, RankProgram program, const std::vector<FaultPlan> &plans)
{
    for (const auto &p : plans) world.add_fault(p);
    return world.run(std::move(program));
}

// ---------------------------------------------------------------------------
// scheduling

World::Actor &World::self_locked(int rank)
{
    auto *actor = static_cast<Actor *>(t_actor);
    if (!actor || actor->rank != rank) throw ProtocolError("communicator used outside its rank program");
    return *actor;
}

void World::spawn_locked(RankContext ctx)
{
    auto actor = std::make_unique<Actor>();
    actor->id = static_cast<int>(actors_.size());
    actor->rank = ctx.rank;
    actor->incarnation = ctx.incarnation;
    actor->outcome.incarnation = ctx.incarnation;
    Actor &ref = *actor;
    actors_.push_back(std::move(actor));
    auto &slot = ranks_[ctx.rank];
    slot.actor = ref.id;
    slot.incarnation = ctx.incarnation;
    slot.alive = true;
    slot.soft_pending = false;
    log_locked(ctx.rank, ctx.fresh ? "respawn_rank" : "spawn", 0,
               "incarnation=" + std::to_string(ctx.incarnation));
    threads_.emplace_back([this, &ref, c = std::move(ctx)]() mutable { rank_main(ref, std::move(c)); });
}

void World::rank_main(Actor &actor, RankContext ctx)
{
    t_actor = &actor;
    {
        std::unique_lock lk(mu_);
        actor.cv.wait(lk, [&] { return actor.turn; });
    }
    RankOutcome outcome;
    outcome.incarnation = actor.incarnation;
    try {
        program_(ctx);
        outcome.status = RankOutcome::Status::completed;
    } catch (const RankKilled &) {
        outcome.status = RankOutcome::Status::killed;
    } catch (const std::exception &e) {
        outcome.status = RankOutcome::Status::failed;
        outcome.error = e.what();
    } catch (...) {
        outcome.status = RankOutcome::Status::failed;
        outcome.error = "unknown exception";
    }
    // Destroy the context (and any communicator handles) before leaving.
    ctx = RankContext{};
    std::unique_lock lk(mu_);
    if (actor.killed) outcome.status = RankOutcome::Status::killed;
    actor.outcome = outcome;
    actor.status = Status::finished;
    log_locked(actor.rank, "exit", 0,
               outcome.status == RankOutcome::Status::completed ? "completed"
               : outcome.status == RankOutcome::Status::killed  ? "killed"
                                                                : "failed: " + outcome.error);
    actor.turn = false;
    if (--running_ == 0) schedule_locked();
    t_actor = nullptr;
}

void World::check_running_locked(Actor &actor)
{
    if (actor.killed) throw RankKilled{actor.rank};
    auto &slot = ranks_[actor.rank];
    if (slot.soft_pending && slot.actor == actor.id) {
        slot.soft_pending = false;
        log_locked(actor.rank, "soft_fault_raised", 0, {});
        throw SoftFault(actor.rank, "injected soft fault on rank " + std::to_string(actor.rank));
    }
}

void World::block_locked(std::unique_lock<std::mutex> &lk, Actor &actor, detail::SlotBase &slot)
{
    // Soft faults surface when the rank next issues an operation, not here.
    if (actor.killed) throw RankKilled{actor.rank};
    while (slot.state == TokenState::pending) {
        actor.status = Status::blocked;
        actor.waiting = &slot;
        yield_locked(lk, actor);
        actor.waiting = nullptr;
        if (actor.killed) throw RankKilled{actor.rank};
    }
}

void World::yield_locked(std::unique_lock<std::mutex> &lk, Actor &actor)
{
    actor.turn = false;
    if (--running_ == 0) schedule_locked();
    actor.cv.wait(lk, [&] { return actor.turn; });
}

void World::schedule_locked()
{
    for (;;) {
        // Promote blocked actors whose wait is over.
        for (auto &a : actors_) {
            if (a->status != Status::blocked) continue;
            if (a->killed || !a->waiting || a->waiting->state != TokenState::pending)
                a->status = Status::runnable;
        }
        std::vector<Actor *> runnable;
        for (auto &a : actors_)
            if (a->status == Status::runnable) runnable.push_back(a.get());
        if (!runnable.empty()) {
            std::sort(runnable.begin(), runnable.end(), [](const Actor *x, const Actor *y) {
                return std::pair(x->rank, x->incarnation) < std::pair(y->rank, y->incarnation);
            });
            std::vector<Actor *> chosen;
            switch (engine_) {
            case Engine::deterministic: chosen = {runnable.front()}; break;
            case Engine::randomized: chosen = {runnable[rng_.below(runnable.size())]}; break;
            case Engine::threaded: chosen = runnable; break;
            }
            for (auto *a : chosen) {
                a->turn = true;
                ++running_;
            }
            for (auto *a : chosen) a->cv.notify_one();
            return;
        }
        const bool all_finished = std::all_of(actors_.begin(), actors_.end(),
                                              [](const auto &a) { return a->status == Status::finished; });
        if (all_finished) {
            done_ = true;
            done_cv_.notify_all();
            return;
        }
        boundary_locked();
        const bool woke = std::any_of(actors_.begin(), actors_.end(), [&](const auto &a) {
            if (a->status != Status::blocked) return a->status == Status::runnable;
            return a->killed || !a->waiting || a->waiting->state != TokenState::pending;
        });
        if (!woke) deadlock_locked();
    }
}

void World::deadlock_locked()
{
    deadlock_ = true;
    log_locked(-1, "deadlock", 0, {});
    for (auto &a : actors_)
        if (a->status == Status::blocked && a->waiting && a->waiting->state == TokenState::pending)
            fail_locked(*a->waiting, FailureKind::deadlock, -1,
                        "deadlock: rank " + std::to_string(a->rank) +
                            " waits on an operation that can never complete");
    for (auto &c : comms_) {
        for (auto &[id, coll] : c->collectives)
            for (auto &[r, s] : coll.slots)
                if (s->state == TokenState::pending) fail_locked(*s, FailureKind::deadlock, -1, "deadlock");
        c->collectives.clear();
        if (c->agreement) {
            for (auto &[r, s] : c->agreement->slots)
                if (s->state == TokenState::pending) fail_locked(*s, FailureKind::deadlock, -1, "deadlock");
            c->agreement.reset();
        }
    }
    for (auto &rv : recvs_)
        if (rv.slot->state == TokenState::pending) fail_locked(*rv.slot, FailureKind::deadlock, -1, "deadlock");
    recvs_.clear();
    for (auto &pl : places_)
        if (pl.slot->state == TokenState::pending) fail_locked(*pl.slot, FailureKind::deadlock, -1, "deadlock");
    places_.clear();
}

void World::fail_locked(detail::SlotBase &slot, FailureKind kind, int culprit, std::string reason)
{
    if (slot.state != TokenState::pending) return;
    slot.state = TokenState::failed;
    slot.failure = kind;
    slot.culprit = culprit;
    slot.reason = std::move(reason);
}

void World::kill_locked(int rank, const std::string &why)
{
    auto &slot = ranks_[rank];
    if (!slot.alive) return;
    slot.alive = false;
    slot.soft_pending = false;
    actors_[slot.actor]->killed = true;
    stores_[rank].clear();
    log_locked(rank, "kill", 0, why);
}

bool World::member_alive_locked(const CommState &comm, int rank) const
{
    const auto it = comm.incarnation.find(rank);
    return it != comm.incarnation.end() && ranks_[rank].alive && ranks_[rank].incarnation == it->second;
}

int World::new_comm_locked(std::vector<int> members, int epoch)
{
    auto c = std::make_unique<CommState>();
    c->id = static_cast<int>(comms_.size());
    c->epoch = epoch;
    for (int r : members) c->incarnation[r] = ranks_[r].incarnation;
    c->members = std::move(members);
    comms_.push_back(std::move(c));
    return comms_.back()->id;
}

void World::log_locked(int rank, std::string kind, std::uint64_t dig, std::string detail)
{
    log_.append({superstep_, rank, std::move(kind), dig, std::move(detail)});
}

void World::revoke_locked(int comm_id, int by)
{
    auto &comm = *comms_[comm_id];
    if (comm.revoked) return;
    comm.revoked = true;
    log_locked(by, "revoke", 0, "comm=" + std::to_string(comm.id) + " epoch=" + std::to_string(comm.epoch));
    const std::string why = "communicator revoked by rank " + std::to_string(by);
    for (auto &[id, coll] : comm.collectives)
        for (auto &[r, s] : coll.slots) fail_locked(*s, FailureKind::revoked, by, why);
    comm.collectives.clear();
    for (auto it = recvs_.begin(); it != recvs_.end();) {
        if (it->comm == comm_id) {
            fail_locked(*it->slot, FailureKind::revoked, by, why);
            it = recvs_.erase(it);
        } else {
            ++it;
        }
    }
    for (auto it = places_.begin(); it != places_.end();) {
        if (it->comm == comm_id) {
            fail_locked(*it->slot, FailureKind::revoked, by, why);
            it = places_.erase(it);
        } else {
            ++it;
        }
    }
}

// ---------------------------------------------------------------------------
// superstep boundary

namespace {

std::vector<double> tree_combine(std::vector<std::vector<double>> parts, ReduceOp op)
{
    while (parts.size() > 1) {
        std::vector<std::vector<double>> next;
        for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
            auto a = std::move(parts[i]);
            const auto &b = parts[i + 1];
            for (std::size_t k = 0; k < a.size(); ++k)
                a[k] = op == ReduceOp::sum ? a[k] + b[k] : std::max(a[k], b[k]);
            next.push_back(std::move(a));
        }
        if (parts.size() % 2) next.push_back(std::move(parts.back()));
        parts = std::move(next);
    }
    return parts.empty() ? std::vector<double>{} : std::move(parts.front());
}

} // namespace

void World::boundary_locked()
{
    ++superstep_;

    for (std::size_t i = 0; i < plans_.size(); ++i) {
        const auto &p = plans_[i];
        if (plan_used_[i] || p.trigger != FaultPlan::Trigger::superstep || p.at > superstep_) continue;
        plan_used_[i] = true;
        auto &slot = ranks_[p.victim];
        if (!slot.alive) continue;
        if (p.kind == FaultPlan::Kind::hard) {
            kill_locked(p.victim, "superstep " + std::to_string(superstep_));
        } else if (actors_[slot.actor]->status != Status::finished) {
            slot.soft_pending = true;
            log_locked(p.victim, "soft_fault", 0, "superstep " + std::to_string(superstep_));
        }
    }

    // Messages and backup placements.
    for (auto &m : in_flight_) {
        if (!ranks_[m.dst].alive || comms_[m.comm]->revoked) continue;
        mailboxes_[{m.comm, m.dst}].push_back(std::move(m));
    }
    in_flight_.clear();
    for (auto &pl : places_) {
        if (pl.slot->state != TokenState::pending) continue;
        if (!ranks_[pl.dest].alive) {
            fail_locked(*pl.slot, FailureKind::rank_failure, pl.dest,
                        "backup holder rank " + std::to_string(pl.dest) + " is dead");
            log_locked(pl.rank, "place_failed", 0, "dest=" + std::to_string(pl.dest));
            continue;
        }
        const auto dig = digest(std::span<const std::uint8_t>(pl.payload));
        const auto bytes = pl.payload.size();
        stores_[pl.dest][pl.rank] = std::move(pl.payload);
        pl.slot->value = pl.dest;
        pl.slot->state = TokenState::ready;
        log_locked(pl.rank, "place", dig, "dest=" + std::to_string(pl.dest) + " bytes=" + std::to_string(bytes));
    }
    places_.clear();

    // Collectives.
    for (auto &cptr : comms_) {
        auto &comm = *cptr;
        if (comm.revoked) continue;
        for (auto it = comm.collectives.begin(); it != comm.collectives.end();) {
            auto &coll = it->second;
            int dead = -1;
            for (int r : comm.members)
                if (!member_alive_locked(comm, r)) {
                    dead = r;
                    break;
                }
            if (dead >= 0) {
                for (auto &[r, s] : coll.slots)
                    fail_locked(*s, FailureKind::rank_failure, dead,
                                "rank " + std::to_string(dead) + " failed");
                it = comm.collectives.erase(it);
                continue;
            }
            if (coll.contrib.size() < comm.members.size()) {
                ++it;
                continue;
            }
            bool mismatch = coll.mismatch;
            const std::size_t len = coll.contrib.begin()->second.size();
            for (auto &[r, v] : coll.contrib) mismatch = mismatch || v.size() != len;
            if (mismatch || coll.slots.size() != coll.contrib.size()) {
                for (auto &[r, s] : coll.slots)
                    fail_locked(*s, FailureKind::protocol, -1, "fused_allreduce: mismatched arguments");
                it = comm.collectives.erase(it);
                continue;
            }
            std::vector<std::vector<double>> parts;
            for (auto &[r, v] : coll.contrib) parts.push_back(std::move(v)); // map order = ascending rank
            auto result = tree_combine(std::move(parts), coll.op);
            ++reductions_;
            log_locked(-1, "reduce", digest(std::span<const double>(result)),
                       "comm=" + std::to_string(comm.id) + " phase=" + coll.tag.phase +
                           " overlapped=" + (coll.tag.overlapped ? "1" : "0") +
                           " n=" + std::to_string(result.size()));
            for (auto &[r, s] : coll.slots) {
                s->value = result;
                s->state = TokenState::ready;
            }
            it = comm.collectives.erase(it);
        }
    }

    // Agreements.
    for (std::size_t ci = 0; ci < comms_.size(); ++ci) {
        auto &comm = *comms_[ci];
        if (!comm.agreement) continue;
        auto &ag = *comm.agreement;
        // Ranks whose program already returned cannot take part; they are
        // left out of the new communicator.
        std::vector<int> alive, lost;
        for (int r : comm.members) {
            if (!member_alive_locked(comm, r))
                lost.push_back(r);
            else if (actors_[ranks_[r].actor]->status != Status::finished || ag.slots.count(r))
                alive.push_back(r);
        }
        // Drop participants that died while waiting.
        for (auto it = ag.slots.begin(); it != ag.slots.end();)
            it = member_alive_locked(comm, it->first) ? std::next(it) : ag.slots.erase(it);
        bool complete = true;
        for (int r : alive) complete = complete && ag.slots.count(r);
        if (!complete) continue;
        comm.agreed = true;
        auto ag_done = std::move(*comm.agreement);
        comm.agreement.reset();
        if (ag_done.mismatch) {
            for (auto &[r, s] : ag_done.slots)
                fail_locked(*s, FailureKind::protocol, -1, "agreement: shrink and respawn mixed");
            continue;
        }
        if (alive.empty()) continue;
        std::vector<int> faulted;
        for (auto &[r, f] : ag_done.failed_locally)
            if (f && member_alive_locked(comm, r)) faulted.push_back(r);
        const int epoch = comm.epoch + 1;
        const bool respawn = ag_done.respawn;
        int next;
        if (respawn) {
            for (int r : lost) {
                ranks_[r].incarnation += 1;
                ranks_[r].alive = true; // reserved for the replacement
            }
            std::vector<int> members = alive;
            members.insert(members.end(), lost.begin(), lost.end());
            std::sort(members.begin(), members.end());
            next = new_comm_locked(members, epoch);
        } else {
            next = new_comm_locked(alive, epoch);
        }
        std::string lost_s;
        for (int r : lost) lost_s += (lost_s.empty() ? "" : ",") + std::to_string(r);
        log_locked(-1, respawn ? "respawn" : "shrink", 0,
                   "comm=" + std::to_string(next) + " epoch=" + std::to_string(epoch) + " lost=[" + lost_s + "]");
        auto make = [&](int r) {
            Reconstitution rc;
            rc.comm = SimCommunicator(this, next, r);
            rc.lost = lost;
            rc.faulted = faulted;
            rc.respawned = respawn;
            return rc;
        };
        for (auto &[r, s] : ag_done.slots) {
            auto &typed = static_cast<detail::Slot<Reconstitution> &>(*s);
            typed.value = make(r);
            typed.state = TokenState::ready;
        }
        if (respawn)
            for (int r : lost) {
                RankContext ctx;
                ctx.rank = r;
                ctx.incarnation = ranks_[r].incarnation;
                ctx.fresh = true;
                ctx.comm = SimCommunicator(this, next, r);
                ctx.origin = make(r);
                spawn_locked(std::move(ctx));
            }
    }

    // Receives.
    for (auto it = recvs_.begin(); it != recvs_.end();) {
        auto &rv = *it;
        if (rv.slot->state != TokenState::pending || actors_[ranks_[rv.rank].actor]->killed) {
            it = recvs_.erase(it);
            continue;
        }
        auto &box = mailboxes_[{rv.comm, rv.rank}];
        std::vector<std::deque<Message>::iterator> found;
        int missing = -1;
        for (auto [src, tag] : rv.sources) {
            auto m = box.begin();
            for (; m != box.end(); ++m)
                if (m->src == src && m->tag == tag &&
                    std::find(found.begin(), found.end(), m) == found.end())
                    break;
            if (m == box.end()) {
                missing = src;
                break;
            }
            found.push_back(m);
        }
        if (missing >= 0) {
            if (!member_alive_locked(*comms_[rv.comm], missing)) {
                fail_locked(*rv.slot, FailureKind::rank_failure, missing,
                            "rank " + std::to_string(missing) + " failed");
                it = recvs_.erase(it);
            } else {
                ++it;
            }
            continue;
        }
        std::vector<Bytes> payloads;
        for (auto m : found) payloads.push_back(std::move(m->payload));
        std::vector<std::size_t> idx;
        for (auto m : found) idx.push_back(static_cast<std::size_t>(m - box.begin()));
        std::sort(idx.rbegin(), idx.rend());
        for (auto i : idx) box.erase(box.begin() + static_cast<std::ptrdiff_t>(i));
        rv.deliver(std::move(payloads));
        it = recvs_.erase(it);
    }
}

} // namespace ftk::sim
