#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ftk/krylov/operator.hpp"
#include "ftk/krylov/reduction.hpp"
#include "ftk/preconditioner.hpp"

namespace ftk::krylov {

enum class Variant { classic, chronopoulos_gear, gropp, pipelined };

std::string to_string(Variant v);
/// Accepts the names produced by to_string.
Variant parse_variant(const std::string &name);

struct SolverConfig {
    Variant variant = Variant::classic;
    double tol = 1e-8; ///< on ‖b − A x‖ relative to ‖b − A x₀‖
    int maxit = 1000;
    bool record_history = true;

    void validate() const;
};

/// Recurrence vectors; those a variant does not use stay empty.
struct KrylovState {
    Vector x, r, p, q, z, w, s, t, u, v;
    double rho = 0.0;         ///< ⟨z, r⟩ (γ in the single-reduction variants)
    double alpha = 0.0;       ///< ⟨p, A p⟩ or the step length, per variant
    double alpha_tilde = 0.0; ///< ⟨z, w⟩ (pipelined)
    double delta = 0.0;       ///< ⟨z, A z⟩ (Chronopoulos–Gear)

    /// Number of non-empty length-N vectors.
    int vector_units() const;
};

struct IterationRecord {
    int iteration = 0;
    double residual_norm = 0.0;
    std::uint64_t reductions_cum = 0;
    std::uint64_t overlapped_cum = 0;
};

struct ConvergenceRecord {
    std::vector<IterationRecord> history; ///< row 0 is the initial residual
    int iterations = 0;
    bool converged = false;
    double initial_residual = 0.0;
    double final_residual = 0.0;
    std::uint64_t reductions = 0; ///< per-iteration reductions only
    std::uint64_t overlapped = 0;
    std::uint64_t setup_reductions = 0;
    int vector_memory_units = 0;
    int extra_vector_ops_units = 0;

    /// iteration,residual_norm,reductions_cum,overlapped_cum
    std::string to_csv() const;
};

/// Persistent length-N vectors per variant: 4, 6, 6, 10.
int memory_accounting(Variant v);
/// Vector updates per iteration beyond classic PCG: 0, 1, 2, 5.
int extra_vector_ops(Variant v);
/// Global reductions per iteration: 2, 1, 2, 1.
int reductions_per_iteration(Variant v);
/// True when the variant overlaps its reductions with operator/preconditioner work.
bool overlapped(Variant v);

/// Preconditioned CG driven one iteration at a time.
///
/// Every inner product goes through the reduction channel, with the
/// residual norm fused into an existing reduction. `start` runs the setup
/// (tagged "setup"); each `step` issues exactly reductions_per_iteration()
/// reductions tagged "iter".
class CgSolver {
public:
    CgSolver(LinearOperator &a, const Preconditioner &m, ReductionChannel &channel, SolverConfig cfg);

    /// Initializes from x0. The convergence reference is ‖b − A x0‖ unless
    /// `reference_norm` is given (used when restarting after recovery).
    /// `first_iteration` lets a replacement rank join a solve in progress.
    void start(std::span<const double> b, Vector x0, std::optional<double> reference_norm = {},
               int first_iteration = 0);
    /// Restarts the recurrence from `x`, keeping iteration count, history
    /// and the convergence reference.
    void restart(Vector x);

    /// One iteration. Returns true once converged.
    bool step();
    /// Steps until converged or maxit.
    const ConvergenceRecord &run();

    bool converged() const { return record_.converged; }
    bool done() const { return record_.converged || iteration_ >= cfg_.maxit; }
    int iteration() const { return iteration_; }
    double residual_norm() const { return residual_; }
    double reference_norm() const { return reference_; }

    const KrylovState &state() const { return st_; }
    KrylovState &mutable_state() { return st_; }
    const ConvergenceRecord &record() const { return record_; }
    const SolverConfig &config() const { return cfg_; }

    /// Replaces the communication endpoints (after a communicator is rebuilt).
    void rebind(LinearOperator &a, ReductionChannel &channel);

private:
    void setup();
    void step_classic();
    void step_chronopoulos_gear();
    void step_gropp();
    void step_pipelined();
    std::vector<double> harvest(sim::CompletionToken<std::vector<double>> &tok);
    void finish_iteration(double rnorm);

    LinearOperator *a_;
    const Preconditioner *m_;
    ReductionChannel *channel_;
    SolverConfig cfg_;
    Vector b_;
    KrylovState st_;
    ConvergenceRecord record_;
    int iteration_ = 0;
    double residual_ = 0.0;
    double reference_ = 0.0;
    bool fresh_ = true; // first iteration after (re)start
};

struct SolveResult {
    Vector x;
    ConvergenceRecord record;
};

/// Serial convenience wrapper.
SolveResult solve(const CsrMatrix &a, std::span<const double> b, const Preconditioner &m,
                  const SolverConfig &cfg, std::optional<Vector> x0 = {});
SolveResult solve(LinearOperator &a, std::span<const double> b, const Preconditioner &m,
                  const SolverConfig &cfg, ReductionChannel &channel, std::optional<Vector> x0 = {});

/// Maximum relative deviation between the pipelined recurrence vectors and
/// their definitions: z = M r, w = A z, s = M q, t = A s, q = A p.
double pipelined_consistency_check(const KrylovState &state, const CsrMatrix &a, const Preconditioner &m);

} // namespace ftk::krylov
