#include <algorithm>
#include <exception>

#include "ftk/sim/world.hpp"

namespace ftk::sim {

int SimCommunicator::size() const
{
    std::lock_guard lk(world_->mu_);
    return static_cast<int>(world_->comms_[comm_]->members.size());
}

std::vector<int> SimCommunicator::members() const
{
    std::lock_guard lk(world_->mu_);
    return world_->comms_[comm_]->members;
}

int SimCommunicator::epoch() const
{
    std::lock_guard lk(world_->mu_);
    return world_->comms_[comm_]->epoch;
}

bool SimCommunicator::revoked() const
{
    std::lock_guard lk(world_->mu_);
    return world_->comms_[comm_]->revoked;
}

std::uint64_t SimCommunicator::superstep() const
{
    std::lock_guard lk(world_->mu_);
    return world_->superstep_;
}

namespace {

template <class T>
std::shared_ptr<detail::Slot<T>> make_slot(World *world, int owner, std::uint64_t op)
{
    auto s = std::make_shared<detail::Slot<T>>();
    s->world = world;
    s->owner = owner;
    s->op_id = op;
    return s;
}

template <class T>
CompletionToken<T> revoked_token(World *world, int owner, std::uint64_t op)
{
    auto s = make_slot<T>(world, owner, op);
    s->state = TokenState::failed;
    s->failure = FailureKind::revoked;
    s->reason = "communicator is revoked";
    return CompletionToken<T>(std::move(s));
}

} // namespace

CompletionToken<std::vector<double>> SimCommunicator::fused_allreduce(std::vector<double> summands,
                                                                      ReduceTag tag, ReduceOp op)
{
    std::unique_lock lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    w.check_running_locked(actor);
    const auto id = w.next_op_++;
    auto &comm = *w.comms_[comm_];
    if (comm.revoked) return revoked_token<std::vector<double>>(world_, rank_, id);

    auto slot = make_slot<std::vector<double>>(world_, rank_, id);
    slot->log_harvest = tag.overlapped;
    const auto seq = comm.next_seq[rank_]++;
    auto &coll = comm.collectives[seq];
    if (coll.slots.empty()) {
        coll.id = seq;
        coll.op = op;
        coll.tag = tag;
    } else if (coll.op != op || coll.tag.phase != tag.phase || coll.tag.overlapped != tag.overlapped) {
        coll.mismatch = true;
    }
    w.log_locked(rank_, "issue", digest(std::span<const double>(summands)),
                 "op=" + std::to_string(id) + " phase=" + tag.phase +
                     " overlapped=" + (tag.overlapped ? "1" : "0") + " n=" + std::to_string(summands.size()));
    coll.contrib[rank_] = std::move(summands);
    coll.slots[rank_] = slot;
    return CompletionToken<std::vector<double>>(std::move(slot));
}

void SimCommunicator::send(int dest, int tag, Bytes payload)
{
    std::unique_lock lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    w.check_running_locked(actor);
    auto &comm = *w.comms_[comm_];
    if (comm.revoked) throw Revoked("send on a revoked communicator");
    if (!comm.incarnation.count(dest)) throw ProtocolError("send: destination is not a member");
    w.log_locked(rank_, "send", digest(std::span<const std::uint8_t>(payload)),
                 "dest=" + std::to_string(dest) + " tag=" + std::to_string(tag));
    w.in_flight_.push_back({comm_, rank_, dest, tag, std::move(payload)});
}

CompletionToken<std::vector<Bytes>> SimCommunicator::recv(std::vector<std::pair<int, int>> sources)
{
    std::unique_lock lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    w.check_running_locked(actor);
    const auto id = w.next_op_++;
    if (w.comms_[comm_]->revoked) return revoked_token<std::vector<Bytes>>(world_, rank_, id);
    auto slot = make_slot<std::vector<Bytes>>(world_, rank_, id);
    if (sources.empty()) {
        slot->state = TokenState::ready;
        slot->value.emplace();
        return CompletionToken<std::vector<Bytes>>(std::move(slot));
    }
    World::PendingRecv rv;
    rv.rank = rank_;
    rv.comm = comm_;
    rv.sources = std::move(sources);
    auto *raw = slot.get();
    rv.deliver = [raw](std::vector<Bytes> &&payloads) {
        raw->value = std::move(payloads);
        raw->state = TokenState::ready;
    };
    rv.slot = slot;
    w.recvs_.push_back(std::move(rv));
    return CompletionToken<std::vector<Bytes>>(std::move(slot));
}

namespace {

constexpr int halo_tag = -100;

std::size_t position(const std::vector<int> &sorted, int index)
{
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), index);
    if (it == sorted.end() || *it != index) throw ProtocolError("halo_exchange: index not in set");
    return static_cast<std::size_t>(it - sorted.begin());
}

} // namespace

CompletionToken<std::vector<double>> SimCommunicator::halo_exchange(const Partition &part,
                                                                   std::span<const double> x_local)
{
    require(rank_ < part.num_ranks, "halo_exchange: rank outside partition");
    const auto &owned = part.owned[rank_];
    require_dims(x_local.size() == owned.size(), "halo_exchange: local vector length mismatch");
    if (part.halo[rank_].empty() && part.send[rank_].empty())
        return CompletionToken<std::vector<double>>::completed({});

    for (const auto &link : part.send[rank_]) {
        std::vector<double> values;
        values.reserve(link.indices.size());
        for (int g : link.indices) values.push_back(x_local[position(owned, g)]);
        send(link.neighbor, halo_tag, pack(values));
    }

    std::unique_lock lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    w.check_running_locked(actor);
    const auto id = w.next_op_++;
    if (w.comms_[comm_]->revoked) return revoked_token<std::vector<double>>(world_, rank_, id);
    auto slot = make_slot<std::vector<double>>(world_, rank_, id);
    World::PendingRecv rv;
    rv.rank = rank_;
    rv.comm = comm_;
    for (const auto &link : part.recv[rank_]) rv.sources.emplace_back(link.neighbor, halo_tag);
    if (rv.sources.empty()) {
        slot->value.emplace();
        slot->state = TokenState::ready;
        return CompletionToken<std::vector<double>>(std::move(slot));
    }
    auto *raw = slot.get();
    const auto &halo = part.halo[rank_];
    std::vector<std::vector<std::size_t>> where;
    for (const auto &link : part.recv[rank_]) {
        auto &pos = where.emplace_back();
        for (int g : link.indices) pos.push_back(position(halo, g));
    }
    rv.deliver = [raw, where = std::move(where), n = halo.size()](std::vector<Bytes> &&payloads) {
        std::vector<double> out(n, 0.0);
        for (std::size_t l = 0; l < payloads.size(); ++l) {
            const auto values = unpack(payloads[l]);
            if (values.size() != where[l].size()) {
                raw->state = TokenState::failed;
                raw->failure = FailureKind::protocol;
                raw->reason = "halo_exchange: neighbor sent wrong length";
                return;
            }
            for (std::size_t k = 0; k < values.size(); ++k) out[where[l][k]] = values[k];
        }
        raw->value = std::move(out);
        raw->state = TokenState::ready;
    };
    rv.slot = slot;
    w.recvs_.push_back(std::move(rv));
    return CompletionToken<std::vector<double>>(std::move(slot));
}

CompletionToken<int> SimCommunicator::place_backup(int dest, Bytes payload)
{
    std::unique_lock lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    w.check_running_locked(actor);
    const auto id = w.next_op_++;
    require(dest >= 0 && dest < w.num_ranks_, "place_backup: destination out of range");
    if (w.comms_[comm_]->revoked) return revoked_token<int>(world_, rank_, id);
    auto slot = make_slot<int>(world_, rank_, id);
    w.places_.push_back({rank_, comm_, dest, std::move(payload), slot});
    return CompletionToken<int>(std::move(slot));
}

std::optional<Bytes> SimCommunicator::stored_backup(int source) const
{
    std::lock_guard lk(world_->mu_);
    const auto &store = world_->stores_[rank_];
    const auto it = store.find(source);
    if (it == store.end()) return std::nullopt;
    return it->second;
}

void SimCommunicator::revoke()
{
    std::lock_guard lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    if (actor.killed) return;
    w.revoke_locked(comm_, rank_);
}

CompletionToken<Reconstitution> SimCommunicator::agree(bool respawn, bool failed_locally)
{
    std::unique_lock lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    if (actor.killed) throw RankKilled{rank_};
    const auto id = w.next_op_++;
    auto slot = make_slot<Reconstitution>(world_, rank_, id);
    auto &comm = *w.comms_[comm_];
    if (!comm.revoked || comm.agreed) {
        slot->state = TokenState::failed;
        slot->failure = FailureKind::protocol;
        slot->reason = comm.agreed ? "communicator was already reconstituted"
                                   : std::string(respawn ? "respawn" : "shrink") +
                                         " on a communicator that is not revoked";
        return CompletionToken<Reconstitution>(std::move(slot));
    }
    if (!comm.agreement) {
        comm.agreement.emplace();
        comm.agreement->respawn = respawn;
    } else if (comm.agreement->respawn != respawn) {
        comm.agreement->mismatch = true;
    }
    comm.agreement->failed_locally[rank_] = failed_locally;
    comm.agreement->slots[rank_] = slot;
    w.log_locked(rank_, respawn ? "respawn_join" : "shrink_join", 0,
                 failed_locally ? "failed_locally=1" : "failed_locally=0");
    return CompletionToken<Reconstitution>(std::move(slot));
}

CompletionToken<Reconstitution> SimCommunicator::shrink_async(bool failed_locally)
{
    return agree(false, failed_locally);
}

CompletionToken<Reconstitution> SimCommunicator::respawn_async(bool failed_locally)
{
    return agree(true, failed_locally);
}

Reconstitution SimCommunicator::shrink(bool failed_locally)
{
    return shrink_async(failed_locally).get();
}

Reconstitution SimCommunicator::respawn(bool failed_locally)
{
    return respawn_async(failed_locally).get();
}

void SimCommunicator::fault_point(std::uint64_t iteration)
{
    std::unique_lock lk(world_->mu_);
    auto &w = *world_;
    auto &actor = w.self_locked(rank_);
    w.check_running_locked(actor);
    for (std::size_t i = 0; i < w.plans_.size(); ++i) {
        const auto &p = w.plans_[i];
        if (w.plan_used_[i] || p.trigger != FaultPlan::Trigger::iteration || p.victim != rank_ ||
            p.at != iteration)
            continue;
        w.plan_used_[i] = true;
        if (p.kind == FaultPlan::Kind::hard) {
            w.kill_locked(rank_, "iteration " + std::to_string(iteration));
            throw RankKilled{rank_};
        }
        w.log_locked(rank_, "soft_fault", 0, "iteration " + std::to_string(iteration));
        throw SoftFault(rank_, "injected soft fault on rank " + std::to_string(rank_) + " at iteration " +
                                   std::to_string(iteration));
    }
}

void SimCommunicator::log(std::string kind, std::string detail, std::uint64_t dig) const
{
    std::lock_guard lk(world_->mu_);
    world_->log_locked(rank_, std::move(kind), dig, std::move(detail));
}

void SimCommunicator::mark_work(const std::string &what, bool begin) const
{
    log(begin ? "work_begin" : "work_end", what);
}

Guard::Guard(SimCommunicator &comm) : comm_(comm), uncaught_(std::uncaught_exceptions()) {}

Guard::~Guard()
{
    if (std::uncaught_exceptions() <= uncaught_ || !comm_.valid()) return;
    try {
        comm_.revoke();
    } catch (...) {
        // Nothing sensible to do while already unwinding.
    }
}

} // namespace ftk::sim
