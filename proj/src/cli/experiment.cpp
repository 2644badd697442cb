#include "ftk/cli/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

#include <json.hpp>

#include "ftk/krylov/block_cg.hpp"
#include "ftk/matrix_market.hpp"
#include "ftk/random.hpp"

namespace ftk::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_safe(std::string s)
{
    for (char &c : s)
        if (c == '"' || c == '\n') c = '\'';
    return s;
}

void write_text(const fs::path &path, const std::string &text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path &path, const json &j) { write_text(path, j.dump(2) + "\n"); }

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

resilience::DistributedSetup base_setup(const ExperimentConfig &cfg)
{
    return {cfg.solver, cfg.precond, cfg.engine, cfg.seed};
}

json record_json(const krylov::ConvergenceRecord &r)
{
    return {{"iterations", r.iterations},
            {"converged", r.converged},
            {"initial_residual", r.initial_residual},
            {"final_residual", r.final_residual},
            {"reductions", r.reductions},
            {"overlapped", r.overlapped},
            {"setup_reductions", r.setup_reductions},
            {"vector_memory_units", r.vector_memory_units},
            {"extra_vector_ops_units", r.extra_vector_ops_units}};
}

json config_json(const ExperimentConfig &cfg)
{
    json j = {{"name", cfg.name},
              {"ranks", cfg.ranks},
              {"variant", krylov::to_string(cfg.solver.variant)},
              {"tol", cfg.solver.tol},
              {"maxit", cfg.solver.maxit},
              {"preconditioner", cfg.precond.kind},
              {"engine", to_string(cfg.engine)},
              {"seed", cfg.seed}};
    if (cfg.matrix_file.empty()) {
        j["nx"] = cfg.nx;
        j["ny"] = cfg.ny;
        j["eps_x"] = cfg.eps_x;
        j["eps_y"] = cfg.eps_y;
    } else {
        j["matrix_file"] = cfg.matrix_file;
    }
    return j;
}

/// Max-norm error against the all-ones solution, when that is the solution.
std::optional<double> ones_error(const ExperimentConfig &cfg, const Vector &x)
{
    if (cfg.rhs != RhsMode::ones_solution || !cfg.matrix_file.empty()) return std::nullopt;
    double e = 0.0;
    for (double v : x) e = std::max(e, std::abs(v - 1.0));
    return e;
}

int solve_block(const ExperimentConfig &cfg, const resilience::Problem &pb, const fs::path &out,
                std::ostream &console)
{
    const auto n = static_cast<std::size_t>(pb.a.rows());
    const auto k = static_cast<std::size_t>(cfg.block_k);
    MultiVector b(n, k);
    Rng rng(cfg.seed);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) b(i, j) = rng.uniform(-1.0, 1.0);
    auto m = make_preconditioner(cfg.precond, pb.a);
    krylov::BlockConfig bc;
    bc.mode = cfg.gram;
    bc.block_size = static_cast<std::size_t>(cfg.block_size);

    Stopwatch sw;
    krylov::BlockResult res;
    try {
        res = krylov::block_solve(pb.a, b, *m, cfg.solver, bc);
    } catch (const Error &e) {
        write_json(out / "error.json", {{"error", e.what()}, {"config", config_json(cfg)}});
        console << cfg.name << ": block solve failed: " << e.what() << "\n";
        return exit_failure;
    }

    std::string csv = "iteration,column,residual_norm\n";
    for (std::size_t j = 0; j < res.columns.size(); ++j)
        for (const auto &h : res.columns[j].history)
            csv += std::to_string(h.iteration) + "," + std::to_string(j) + "," + num(h.residual_norm) + "\n";
    write_text(out / "block_convergence.csv", csv);

    json cols = json::array();
    for (const auto &c : res.columns) cols.push_back(record_json(c));
    write_json(out / "summary.json", {{"config", config_json(cfg)},
                                      {"block_k", cfg.block_k},
                                      {"iterations", res.iterations},
                                      {"converged", res.converged},
                                      {"reductions", res.reductions},
                                      {"columns", cols}});
    console << cfg.name << ": block k=" << k << " " << (res.converged ? "converged" : "not converged")
            << " in " << res.iterations << " iterations (" << sw.seconds() << " s)\n";
    return res.converged ? exit_converged : exit_failure;
}

} // namespace

resilience::Problem build_problem(const ExperimentConfig &cfg)
{
    if (cfg.matrix_file.empty())
        return resilience::Problem::poisson(StructuredGrid{cfg.nx, cfg.ny, 1.0}, Anisotropy{cfg.eps_x, cfg.eps_y},
                                            cfg.rhs, cfg.seed, cfg.ranks);
    resilience::Problem p;
    p.a = read_matrix_market(fs::path(cfg.matrix_file));
    const int n = p.a.rows();
    if (n != p.a.cols()) throw ConfigError("problem.matrix_file: matrix is not square");
    if (cfg.ranks > n) throw ConfigError("partition.ranks exceeds the matrix order");
    // One line of n points; no rank strip is a whole grid line unless it owns everything.
    p.grid = StructuredGrid{n, 1, 1.0};
    p.b = make_rhs(p.a, cfg.rhs, cfg.seed).b;
    std::vector<int> owner(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        owner[static_cast<std::size_t>(i)] =
            static_cast<int>(static_cast<long long>(i) * cfg.ranks / n);
    p.part = make_partition(p.a, std::move(owner), cfg.ranks);
    return p;
}

std::vector<sim::FaultPlan> resolve_faults(const ExperimentConfig &cfg, int fault_free_iterations)
{
    std::vector<sim::FaultPlan> out;
    for (const auto &f : cfg.faults) {
        sim::FaultPlan p{f.victim, f.trigger, f.at, f.kind};
        if (f.at_fraction)
            p.at = static_cast<std::uint64_t>(std::llround(*f.at_fraction * fault_free_iterations));
        out.push_back(p);
    }
    return out;
}

int cmd_generate(const ExperimentConfig &cfg, const fs::path &out, std::ostream &console)
{
    fs::create_directories(out);
    const auto pb = build_problem(cfg);
    write_matrix_market(pb.a, out / "matrix.mtx");
    write_vector(pb.b, out / "rhs.txt");
    if (cfg.rhs == RhsMode::ones_solution)
        write_vector(Vector(static_cast<std::size_t>(pb.a.rows()), 1.0), out / "x_exact.txt");
    console << cfg.name << ": wrote n=" << pb.a.rows() << " nnz=" << pb.a.nnz() << " to " << out.string()
            << "\n";
    return exit_converged;
}

int cmd_solve(const ExperimentConfig &cfg, const fs::path &out, std::ostream &console)
{
    fs::create_directories(out);
    const auto pb = build_problem(cfg);
    if (cfg.block_k > 1) return solve_block(cfg, pb, out, console);

    Stopwatch sw;
    resilience::DistributedResult res;
    try {
        res = resilience::distributed_solve(pb, base_setup(cfg));
    } catch (const Error &e) {
        write_json(out / "error.json", {{"error", e.what()}, {"config", config_json(cfg)}});
        console << cfg.name << ": solve failed: " << e.what() << "\n";
        return exit_failure;
    }
    write_text(out / "convergence.csv", res.record.to_csv());
    write_text(out / "events.jsonl", res.sim.log.to_jsonl());
    json summary = {{"config", config_json(cfg)}, {"result", record_json(res.record)}};
    if (auto e = ones_error(cfg, res.x)) summary["result"]["error_max"] = *e;
    write_json(out / "summary.json", summary);
    console << cfg.name << ": " << (res.record.converged ? "converged" : "not converged") << " in "
            << res.record.iterations << " iterations, relative residual "
            << res.record.final_residual / res.record.initial_residual << " (" << sw.seconds() << " s)\n";
    return res.record.converged ? exit_converged : exit_failure;
}

int cmd_faulttest(const ExperimentConfig &cfg, const fs::path &out, std::ostream &console)
{
    if (cfg.faults.empty()) {
        console << cfg.name << ": faulttest needs at least one entry in resilience.faults\n";
        return exit_config;
    }
    fs::create_directories(out);
    const auto pb = build_problem(cfg);

    Stopwatch sw;
    resilience::DistributedResult clean;
    try {
        clean = resilience::distributed_solve(pb, base_setup(cfg));
    } catch (const Error &e) {
        write_json(out / "error.json", {{"error", e.what()}, {"config", config_json(cfg)}});
        console << cfg.name << ": fault-free baseline failed: " << e.what() << "\n";
        return exit_failure;
    }
    const int n_free = clean.record.iterations;

    resilience::ResilientSetup setup;
    setup.base = base_setup(cfg);
    setup.codec = cfg.codec;
    setup.policy = cfg.policy;
    setup.faults = resolve_faults(cfg, n_free);
    const auto res = resilience::resilient_solve(pb, setup);

    write_text(out / "convergence.csv", res.history_csv());
    write_text(out / "resilience.jsonl", res.log_jsonl());

    json faults = json::array();
    for (const auto &f : setup.faults)
        faults.push_back({{"victim", f.victim},
                          {"trigger", f.trigger == sim::FaultPlan::Trigger::iteration ? "iteration" : "superstep"},
                          {"at", f.at},
                          {"kind", f.kind == sim::FaultPlan::Kind::hard ? "hard" : "soft"}});
    json recs = json::array();
    for (const auto &r : res.recoveries)
        recs.push_back({{"rank", r.rank},
                        {"iteration", r.iteration},
                        {"failed", r.failed},
                        {"snapshot_iteration", r.snapshot_iteration},
                        {"aux_iterations", r.aux_iterations},
                        {"aux_converged", r.aux_converged},
                        {"residual_after", r.residual_after}});
    json summary = {{"config", config_json(cfg)},
                    {"codec", cfg.codec.describe()},
                    {"strategy", resilience::to_string(cfg.policy.strategy)},
                    {"backup_frequency", cfg.policy.backup_frequency},
                    {"faults", faults},
                    {"outcome", resilience::to_string(res.outcome)},
                    {"diagnosis", res.diagnosis},
                    {"fault_free_iterations", n_free},
                    {"result", record_json(res.record)},
                    {"extra_iterations", res.iterations() - n_free},
                    {"backups", res.backups.size()},
                    {"cumulative_backup_bytes", res.cumulative_backup_bytes()},
                    {"aux_iterations", res.aux_iterations()},
                    {"recoveries", recs},
                    {"on_exception_calls", res.on_exception_calls}};
    if (res.converged())
        if (auto e = ones_error(cfg, res.x)) summary["result"]["error_max"] = *e;
    write_json(out / "summary.json", summary);

    console << cfg.name << ": " << resilience::to_string(res.outcome) << " after " << res.iterations()
            << " iterations (fault-free " << n_free << ")";
    if (!res.diagnosis.empty()) console << ": " << res.diagnosis;
    console << " (" << sw.seconds() << " s)\n";
    switch (res.outcome) {
    case resilience::ResilientResult::Outcome::converged: return exit_converged;
    case resilience::ResilientResult::Outcome::recovered_converged: return exit_recovered;
    case resilience::ResilientResult::Outcome::failed: break;
    }
    return exit_failure;
}

int cmd_compare(const std::vector<ExperimentConfig> &cfgs, const fs::path &out, std::ostream &console)
{
    if (cfgs.size() < 2) {
        console << "compare needs at least two configs\n";
        return exit_config;
    }
    for (std::size_t i = 1; i < cfgs.size(); ++i)
        if (!cfgs[i].same_problem(cfgs[0])) {
            console << "compare: config '" << cfgs[i].name << "' describes a different problem than '"
                    << cfgs[0].name << "'\n";
            return exit_config;
        }
    fs::create_directories(out);

    std::vector<krylov::ConvergenceRecord> recs;
    std::vector<std::string> errors;
    for (const auto &cfg : cfgs) {
        Stopwatch sw;
        const auto pb = build_problem(cfg);
        try {
            recs.push_back(resilience::distributed_solve(pb, base_setup(cfg)).record);
            errors.emplace_back();
        } catch (const Error &e) {
            recs.emplace_back();
            errors.emplace_back(e.what());
        }
        console << cfg.name << ": " << (errors.back().empty() ? "" : "failed, ") << recs.back().iterations
                << " iterations (" << sw.seconds() << " s)\n";
    }

    std::size_t rows = 0;
    for (const auto &r : recs) rows = std::max(rows, r.history.size());
    std::string csv = "iteration";
    for (const auto &c : cfgs) csv += "," + c.name;
    csv += "\n";
    for (std::size_t i = 0; i < rows; ++i) {
        csv += std::to_string(i);
        for (const auto &r : recs) {
            csv += ",";
            if (i < r.history.size()) csv += num(r.history[i].residual_norm);
        }
        csv += "\n";
    }
    write_text(out / "compare.csv", csv);

    std::string sum = "name,variant,preconditioner,ranks,converged,iterations,final_relative_residual,reductions,"
                      "overlapped,vector_memory_units,extra_vector_ops_units,error\n";
    bool all = true;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        const auto &c = cfgs[i];
        const auto &r = recs[i];
        const double rel = r.initial_residual > 0.0 ? r.final_residual / r.initial_residual : 0.0;
        sum += c.name + "," + krylov::to_string(c.solver.variant) + "," + c.precond.kind + "," +
               std::to_string(c.ranks) + "," + (r.converged ? "true" : "false") + "," +
               std::to_string(r.iterations) + "," + num(rel) + "," + std::to_string(r.reductions) + "," +
               std::to_string(r.overlapped) + "," + std::to_string(r.vector_memory_units) + "," +
               std::to_string(r.extra_vector_ops_units) + ",\"" + csv_safe(errors[i]) + "\"\n";
        all = all && r.converged;
    }
    write_text(out / "compare_summary.csv", sum);
    return all ? exit_converged : exit_failure;
}

} // namespace ftk::cli
