// ftk: generate problems, run solves, fault tests and comparisons from JSON configs.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ftk/cli/config.hpp"
#include "ftk/cli/experiment.hpp"

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> engine;
    std::optional<std::string> out;
};

ftk::cli::ExperimentConfig load(const std::string &path, const Overrides &o)
{
    auto cfg = ftk::cli::load_config(path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.engine) cfg.engine = ftk::cli::parse_engine(*o.engine);
    return cfg;
}

} // namespace

int main(int argc, char **argv)
{
    using namespace ftk::cli;

    CLI::App app{"Fault-tolerant Krylov solver experiments"};
    app.require_subcommand(1);

    Overrides ov;
    std::vector<std::string> configs;
    auto add_common = [&](CLI::App *sub, bool many) {
        if (many)
            sub->add_option("--config", configs, "experiment config (repeat for each run)")->required();
        else
            sub->add_option("--config", configs, "experiment config")->required()->expected(1);
        sub->add_option("--seed", ov.seed, "override problem.seed");
        sub->add_option("--engine", ov.engine, "deterministic, randomized or threaded");
        sub->add_option("--out", ov.out, "output directory (default: output.dir of the config)");
    };

    auto *gen = app.add_subcommand("generate", "write the matrix and right-hand side");
    auto *solve = app.add_subcommand("solve", "fault-free distributed solve");
    auto *fault = app.add_subcommand("faulttest", "solve with injected faults and recovery");
    auto *cmp = app.add_subcommand("compare", "run several configs on one problem");
    add_common(gen, false);
    add_common(solve, false);
    add_common(fault, false);
    add_common(cmp, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_config;
    }

    try {
        if (cmp->parsed()) {
            std::vector<ExperimentConfig> cfgs;
            for (const auto &c : configs) cfgs.push_back(load(c, ov));
            return cmd_compare(cfgs, ov.out ? *ov.out : cfgs.front().out_dir, std::cout);
        }
        const auto cfg = load(configs.front(), ov);
        const std::string out = ov.out ? *ov.out : cfg.out_dir;
        if (gen->parsed()) return cmd_generate(cfg, out, std::cout);
        if (solve->parsed()) return cmd_solve(cfg, out, std::cout);
        return cmd_faulttest(cfg, out, std::cout);
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const ftk::InvalidArgument &e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return exit_config;
    } catch (const ftk::ParseError &e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_failure;
    }
}
