#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ftk/grid.hpp"
#include "ftk/krylov/cg.hpp"
#include "ftk/preconditioner.hpp"
#include "ftk/resilience/codec.hpp"
#include "ftk/resilience/recovery.hpp"
#include "ftk/sim/world.hpp"

namespace ftk::resilience {

/// A partitioned model problem. Every rank can rebuild its share from this
/// alone, which is how replacement ranks re-assemble.
struct Problem {
    StructuredGrid grid;
    Anisotropy aniso;
    CsrMatrix a;
    Vector b;
    Partition part;

    static Problem poisson(const StructuredGrid &grid, const Anisotropy &aniso, RhsMode rhs, std::uint64_t seed,
                           int ranks);

    int num_ranks() const { return part.num_ranks; }
    /// Grid layout of a rank's strip, when it is a whole number of lines.
    std::optional<StructuredGrid> layout(int rank) const;
    /// Global vector from owned segments.
    Vector assemble(const std::vector<Vector> &segments) const;
};

struct DistributedSetup {
    krylov::SolverConfig solver;
    PreconditionerSpec precond; ///< applied to each rank's diagonal block
    sim::Engine engine = sim::Engine::deterministic;
    std::uint64_t seed = 0;
};

struct DistributedResult {
    Vector x;
    krylov::ConvergenceRecord record;
    sim::SimulationResult sim;
};

/// Fault-free distributed solve with no resilience machinery. A solver
/// error on any rank (breakdown, divergence) is re-raised here.
DistributedResult distributed_solve(const Problem &problem, const DistributedSetup &setup);

/// What hook callbacks see on one rank.
struct LoopContext {
    int rank = 0;
    int incarnation = 0;
    int iteration = 0;
    sim::SimCommunicator *comm = nullptr;
    krylov::CgSolver *solver = nullptr; ///< null until the solver has started
    Vector *restart = nullptr;          ///< recovery hooks: iterate the solver restarts from
    std::vector<int> failed;            ///< recovery hooks: ranks whose data was lost
};

/// Callback stacks run in registration order.
struct HookStacks {
    using Hook = std::function<void(LoopContext &)>;
    /// Returns true when the callback handled the exception.
    using ExceptionHook = std::function<bool(const std::exception &, LoopContext &)>;

    std::vector<Hook> recovery;
    std::vector<Hook> backup;
    std::vector<ExceptionHook> on_exception;

    void run_recovery(LoopContext &ctx) const;
    void run_backup(LoopContext &ctx) const;
    /// Runs every callback; true when at least one handled the exception.
    bool run_on_exception(const std::exception &e, LoopContext &ctx) const;
};

struct ResilientSetup {
    DistributedSetup base;
    Codec codec;
    RecoveryPolicy policy;
    std::vector<sim::FaultPlan> faults;
    /// Appended after the built-in callbacks.
    HookStacks hooks;
    /// Built-in handler accepting communication failures and soft faults.
    bool handle_comm_errors = true;
};

struct BackupRecord {
    int rank = 0;
    int iteration = 0;
    int holder = -1; ///< -1 when no rank could store it
    double tau = 0.0;
    std::uint64_t uncompressed_len = 0;
    std::uint64_t payload_len = 0;
};

struct RecoveryRecord {
    int rank = 0;
    int iteration = 0;          ///< solver iteration at which the recovery ran
    bool failed = false;        ///< this rank's data was lost
    int snapshot_iteration = -1; ///< -1: no backup, zero data used
    int aux_iterations = -1;     ///< -1 unless an auxiliary problem was solved
    bool aux_converged = false;
    double residual_after = 0.0;
};

struct ResilientResult {
    enum class Outcome { converged, recovered_converged, failed };

    Outcome outcome = Outcome::failed;
    std::string diagnosis;
    Vector x;
    krylov::ConvergenceRecord record;
    std::vector<BackupRecord> backups;       ///< sorted by (iteration, rank)
    std::vector<RecoveryRecord> recoveries;  ///< sorted by (iteration, rank)
    std::vector<int> on_exception_calls;     ///< per rank, summed over incarnations
    sim::SimulationResult sim;

    bool converged() const { return outcome != Outcome::failed; }
    int iterations() const { return record.iterations; }
    std::uint64_t cumulative_backup_bytes() const;
    /// Aux iterations summed over ranks that solved a subproblem.
    int aux_iterations() const;
    /// Convergence history plus compression_rate and cumulative_backup_bytes.
    std::string history_csv() const;
    /// Resilience-relevant events as JSON lines.
    std::string log_jsonl() const;
};

std::string to_string(ResilientResult::Outcome o);

/// Distributed PCG wrapped in the guarded backup/recover loop. Hard faults
/// kill ranks; the communicator is rebuilt and lost data is recovered per
/// the policy before iteration resumes.
ResilientResult resilient_solve(const Problem &problem, const ResilientSetup &setup);

} // namespace ftk::resilience
