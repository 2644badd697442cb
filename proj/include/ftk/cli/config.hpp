#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ftk/krylov/cg.hpp"
#include "ftk/preconditioner.hpp"
#include "ftk/resilience/codec.hpp"
#include "ftk/resilience/recovery.hpp"
#include "ftk/sim/world.hpp"
#include "ftk/sparse.hpp"

namespace ftk::cli {

/// Malformed or invalid experiment configuration.
class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

struct FaultSpec {
    int victim = 0;
    sim::FaultPlan::Trigger trigger = sim::FaultPlan::Trigger::iteration;
    std::uint64_t at = 0;
    /// When set, `at` is this fraction of the fault-free iteration count.
    std::optional<double> at_fraction;
    sim::FaultPlan::Kind kind = sim::FaultPlan::Kind::hard;
};

struct ExperimentConfig {
    std::string name = "run";

    // problem
    int nx = 32;
    int ny = 32;
    double eps_x = 1.0;
    double eps_y = 1.0;
    RhsMode rhs = RhsMode::random;
    std::uint64_t seed = 0;
    std::string matrix_file; ///< overrides the grid problem when set

    int ranks = 1;
    krylov::SolverConfig solver;
    PreconditionerSpec precond;

    int block_k = 1;
    GramMode gram = GramMode::diagonal;
    int block_size = 1;

    resilience::Codec codec = resilience::Codec::adaptive();
    resilience::RecoveryPolicy policy;
    std::vector<FaultSpec> faults;

    sim::Engine engine = sim::Engine::deterministic;
    std::string out_dir = "out";

    void validate() const;
    /// True when two configs describe the same linear system.
    bool same_problem(const ExperimentConfig &other) const;
};

/// Parses the JSON form. Unknown keys and wrong types are rejected.
ExperimentConfig parse_config(const std::string &text);
ExperimentConfig load_config(const std::filesystem::path &path);

std::string to_string(sim::Engine e);
sim::Engine parse_engine(const std::string &name);

} // namespace ftk::cli
