#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ftk/grid.hpp"
#include "ftk/random.hpp"
#include "ftk/sim/token.hpp"

namespace ftk::sim {

using Bytes = std::vector<std::uint8_t>;

/// 64-bit FNV-1a, used for payload digests in the event log.
std::uint64_t digest(std::span<const std::uint8_t> bytes);
std::uint64_t digest(std::span<const double> values);

Bytes pack(std::span<const double> values);
std::vector<double> unpack(const Bytes &bytes);

struct Event {
    std::uint64_t superstep = 0;
    int rank = -1; ///< -1 for world-level events
    std::string kind;
    std::uint64_t digest = 0;
    std::string detail;
};

class EventLog {
public:
    void append(Event e) { events_.push_back(std::move(e)); }
    const std::vector<Event> &events() const { return events_; }
    std::size_t count(std::string_view kind) const;
    /// One JSON object per line: superstep, rank, kind, digest, detail.
    std::string to_jsonl() const;

private:
    std::vector<Event> events_;
};

struct FaultPlan {
    enum class Trigger { superstep, iteration };
    enum class Kind { hard, soft };

    int victim = 0;
    Trigger trigger = Trigger::iteration;
    std::uint64_t at = 0;
    Kind kind = Kind::hard;
};

enum class Engine {
    deterministic, ///< one rank at a time, lowest runnable rank first
    randomized,    ///< one rank at a time, seeded random choice among runnable ranks
    threaded       ///< ranks run concurrently; results identical, event order not
};

enum class ReduceOp { sum, max };

struct ReduceTag {
    std::string phase = "iter";
    bool overlapped = false;
};

class SimCommunicator;

/// Outcome of a shrink or respawn agreement.
struct Reconstitution;

/// What a rank program receives when it starts.
struct RankContext;

using RankProgram = std::function<void(RankContext &)>;

struct RankOutcome {
    enum class Status { completed, failed, killed } status = Status::completed;
    std::string error;
    int incarnation = 0;
};

struct SimulationResult {
    EventLog log;
    std::vector<RankOutcome> outcomes; ///< final incarnation of each rank
    bool deadlock = false;
    std::uint64_t supersteps = 0;
    std::uint64_t reductions = 0;
};

/// Deterministic simulated message-passing world.
///
/// Every rank program runs on its own thread, but in the default engine only
/// the rank holding the baton executes. When the running rank blocks, the
/// baton passes to the lowest runnable rank; when no rank is runnable the
/// superstep ends and all communication issued during it is resolved in a
/// fixed order. Failures become visible to peers only at these boundaries.
class World {
public:
    explicit World(int num_ranks, std::uint64_t seed = 0, Engine engine = Engine::deterministic);
    ~World();
    World(const World &) = delete;
    World &operator=(const World &) = delete;

    int num_ranks() const { return num_ranks_; }
    Engine engine() const { return engine_; }

    void add_fault(const FaultPlan &plan);

    /// Runs `program` on every rank until all terminate. Respawned ranks run
    /// the same program with `RankContext::fresh` set.
    SimulationResult run(RankProgram program);

private:
    friend class SimCommunicator;
    friend void detail::block_on(World &, detail::SlotBase &);
    friend TokenState detail::query(World &, const detail::SlotBase &);
    friend void detail::harvested(World &, const detail::SlotBase &);

    enum class Status { runnable, blocked, finished };

    /// One thread running one incarnation of a rank.
    struct Actor {
        int id = 0;
        int rank = 0;
        int incarnation = 0;
        Status status = Status::runnable;
        bool turn = false;
        bool killed = false;
        detail::SlotBase *waiting = nullptr;
        std::condition_variable cv;
        RankOutcome outcome;
    };

    struct RankSlot {
        bool alive = true;
        bool soft_pending = false;
        int incarnation = 0;
        int actor = -1;
    };

    struct Collective {
        std::uint64_t id = 0;
        ReduceOp op = ReduceOp::sum;
        ReduceTag tag;
        bool mismatch = false;
        std::map<int, std::vector<double>> contrib;
        std::map<int, std::shared_ptr<detail::Slot<std::vector<double>>>> slots;
    };

    struct Agreement {
        bool respawn = false;
        bool mismatch = false;
        std::map<int, bool> failed_locally;
        std::map<int, std::shared_ptr<detail::SlotBase>> slots;
    };

    struct CommState {
        int id = 0;
        int epoch = 0;
        std::vector<int> members;
        std::map<int, int> incarnation; // member rank -> incarnation at creation
        bool revoked = false;
        bool agreed = false;
        std::map<int, std::uint64_t> next_seq;
        std::map<std::uint64_t, Collective> collectives;
        std::optional<Agreement> agreement;
    };

    struct Message {
        int comm;
        int src;
        int dst;
        int tag;
        Bytes payload;
    };

    struct PendingRecv {
        int rank;
        int comm;
        std::vector<std::pair<int, int>> sources; // (src, tag)
        std::function<void(std::vector<Bytes> &&)> deliver;
        std::shared_ptr<detail::SlotBase> slot;
    };

    struct PendingPlace {
        int rank;
        int comm;
        int dest;
        Bytes payload;
        std::shared_ptr<detail::Slot<int>> slot;
    };

    // All *_locked members expect mu_ to be held.
    Actor &self_locked(int rank);
    void block_locked(std::unique_lock<std::mutex> &lk, Actor &actor, detail::SlotBase &slot);
    void yield_locked(std::unique_lock<std::mutex> &lk, Actor &actor);
    void schedule_locked();
    void boundary_locked();
    void deadlock_locked();
    void fail_locked(detail::SlotBase &slot, FailureKind kind, int culprit, std::string reason);
    void kill_locked(int rank, const std::string &why);
    void revoke_locked(int comm, int by);
    void check_running_locked(Actor &actor);
    void spawn_locked(RankContext ctx);
    void rank_main(Actor &actor, RankContext ctx);
    void log_locked(int rank, std::string kind, std::uint64_t dig, std::string detail);
    bool member_alive_locked(const CommState &comm, int rank) const;
    int new_comm_locked(std::vector<int> members, int epoch);

    int num_ranks_;
    Engine engine_;
    Rng rng_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<RankSlot> ranks_;
    std::vector<std::unique_ptr<Actor>> actors_;
    std::condition_variable done_cv_;
    int running_ = 0;
    bool done_ = false;
    bool deadlock_ = false;
    std::uint64_t superstep_ = 0;
    std::uint64_t reductions_ = 0;
    std::uint64_t next_op_ = 1;

    std::vector<std::unique_ptr<CommState>> comms_;
    std::vector<Message> in_flight_;
    std::map<std::pair<int, int>, std::deque<Message>> mailboxes_; // (comm, dst)
    std::vector<std::thread> threads_;
    std::list<PendingRecv> recvs_;
    std::list<PendingPlace> places_;
    std::vector<std::map<int, Bytes>> stores_; // per rank: source -> backup payload
    std::vector<FaultPlan> plans_;
    std::vector<bool> plan_used_;

    RankProgram program_;
    EventLog log_;
};

/// Per-rank handle on a communicator epoch.
class SimCommunicator {
public:
    SimCommunicator() = default;

    int rank() const { return rank_; }
    int size() const;
    std::vector<int> members() const;
    int epoch() const;
    bool revoked() const;
    bool valid() const { return world_ != nullptr; }
    std::uint64_t superstep() const;
    World &world() const { return *world_; }

    /// Elementwise global reduction of all summands in one operation; the
    /// world's reduction counter grows by one regardless of list length.
    /// Contributions are combined in an ascending-rank pairwise tree.
    CompletionToken<std::vector<double>> fused_allreduce(std::vector<double> summands,
                                                         ReduceTag tag = {},
                                                         ReduceOp op = ReduceOp::sum);

    /// Point-to-point; delivered at the next superstep boundary.
    void send(int dest, int tag, Bytes payload);
    /// Receives one message from each (source, tag), in the listed order.
    CompletionToken<std::vector<Bytes>> recv(std::vector<std::pair<int, int>> sources);

    /// Fetches this rank's halo values (ordered as `part.halo[rank]`).
    CompletionToken<std::vector<double>> halo_exchange(const Partition &part,
                                                       std::span<const double> x_local);

    /// Stores `payload` in the in-memory backup store of `dest`.
    CompletionToken<int> place_backup(int dest, Bytes payload);
    /// Backups other ranks placed in this rank's store.
    std::optional<Bytes> stored_backup(int source) const;

    /// Poisons this epoch: pending and future operations fail with Revoked.
    void revoke();
    /// Survivor agreement on a revoked communicator (epoch + 1).
    CompletionToken<Reconstitution> shrink_async(bool failed_locally = false);
    /// Like shrink, but lost ranks are replaced by fresh incarnations.
    CompletionToken<Reconstitution> respawn_async(bool failed_locally = false);
    Reconstitution shrink(bool failed_locally = false);
    Reconstitution respawn(bool failed_locally = false);

    /// Fault-injection point for iteration-triggered plans.
    void fault_point(std::uint64_t iteration);

    /// Appends an application event to the world log.
    void log(std::string kind, std::string detail = {}, std::uint64_t dig = 0) const;
    void mark_work(const std::string &what, bool begin) const;

private:
    friend class World;
    SimCommunicator(World *world, int comm, int rank) : world_(world), comm_(comm), rank_(rank) {}

    CompletionToken<Reconstitution> agree(bool respawn, bool failed_locally);

    World *world_ = nullptr;
    int comm_ = -1;
    int rank_ = -1;
};

struct Reconstitution {
    SimCommunicator comm;
    std::vector<int> lost;    ///< ranks that died (replaced when respawned)
    std::vector<int> faulted; ///< live ranks that reported a local exception
    bool respawned = false;
};

struct RankContext {
    int rank = 0;
    int incarnation = 0;
    bool fresh = false;
    SimCommunicator comm;
    std::optional<Reconstitution> origin; ///< set for respawned ranks
};

/// RAII scope guard: if the scope is left by an exception, the communicator
/// is revoked so peers blocked in communication observe the failure.
class Guard {
public:
    explicit Guard(SimCommunicator &comm);
    ~Guard();
    Guard(const Guard &) = delete;
    Guard &operator=(const Guard &) = delete;

private:
    SimCommunicator &comm_;
    int uncaught_;
};

/// Runs `body` inside a Guard. Errors are re-raised after revocation.
template <class F>
void guard_scope(SimCommunicator &comm, F &&body)
{
    Guard guard(comm);
    body();
}

SimulationResult run_simulation(World &world, RankProgram program,
                                const std::vector<FaultPlan> &plans = {});

} // namespace ftk::sim
