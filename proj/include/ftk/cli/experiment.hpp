#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ftk/cli/config.hpp"
#include "ftk/resilience/resilient_solver.hpp"

namespace ftk::cli {

/// Process exit codes. Usage mistakes count as configuration errors.
enum ExitCode : int { exit_converged = 0, exit_recovered = 2, exit_failure = 3, exit_config = 4 };

/// The partitioned linear system a config describes.
resilience::Problem build_problem(const ExperimentConfig &cfg);

/// Fault plans with `at_fraction` resolved against `fault_free_iterations`.
std::vector<sim::FaultPlan> resolve_faults(const ExperimentConfig &cfg, int fault_free_iterations);

/// Matrix Market matrix plus right-hand side (and exact solution for
/// the ones mode) in `out`.
int cmd_generate(const ExperimentConfig &cfg, const std::filesystem::path &out, std::ostream &console);
/// convergence.csv, summary.json and events.jsonl; with block.k > 1 a
/// block solve on k seeded random right-hand sides instead.
int cmd_solve(const ExperimentConfig &cfg, const std::filesystem::path &out, std::ostream &console);
/// resilience.jsonl, convergence.csv (with backup telemetry) and summary.json.
int cmd_faulttest(const ExperimentConfig &cfg, const std::filesystem::path &out, std::ostream &console);
/// compare.csv (residual per iteration, one column per config) and
/// compare_summary.csv. All configs must describe the same problem.
int cmd_compare(const std::vector<ExperimentConfig> &cfgs, const std::filesystem::path &out, std::ostream &console);

} // namespace ftk::cli
