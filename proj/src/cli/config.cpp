#include "ftk/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ftk::cli {

using nlohmann::json;

std::string to_string(sim::Engine e)
{
    switch (e) {
    case sim::Engine::deterministic: return "deterministic";
    case sim::Engine::randomized: return "randomized";
    case sim::Engine::threaded: return "threaded";
    }
    return "?";
}

sim::Engine parse_engine(const std::string &name)
{
    for (auto e : {sim::Engine::deterministic, sim::Engine::randomized, sim::Engine::threaded})
        if (to_string(e) == name) return e;
    throw ConfigError("unknown engine '" + name + "' (deterministic, randomized, threaded)");
}

namespace {

/// Strict view of one JSON object: every key must be consumed.
class Section {
public:
    Section(const json &j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    /// Rejects keys nobody asked for.
    void done() const
    {
        for (const auto &[k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where(k) + ": unknown key");
    }

    bool has(const std::string &k)
    {
        seen_.insert(k);
        return j_.contains(k);
    }

    const json &raw(const std::string &k)
    {
        seen_.insert(k);
        return j_.at(k);
    }

    template <class T>
    void get(const std::string &k, T &out)
    {
        if (!has(k)) return;
        const json &v = j_.at(k);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where(k) + ": expected true/false");
            out = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where(k) + ": expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_unsigned() || v.get<long long>() >= 0)
                    out = v.get<T>();
                else
                    throw ConfigError(where(k) + ": expected a non-negative integer");
            } else {
                const auto x = v.get<long long>();
                if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
                    throw ConfigError(where(k) + ": integer out of range");
                out = static_cast<T>(x);
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where(k) + ": expected a number");
            out = v.get<T>();
        } else {
            if (!v.is_string()) throw ConfigError(where(k) + ": expected a string");
            out = v.get<std::string>();
        }
    }

    std::string where(const std::string &k) const { return path_ + "." + k; }

private:
    const json &j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
auto wrap(const std::string &where, F &&f)
{
    try {
        return f();
    } catch (const ConfigError &) {
        throw;
    } catch (const InvalidArgument &e) {
        throw ConfigError(where + ": " + e.what());
    }
}

GramMode parse_gram(const std::string &s)
{
    if (s == "diagonal") return GramMode::diagonal;
    if (s == "block_diagonal") return GramMode::block_diagonal;
    if (s == "full") return GramMode::full;
    throw ConfigError("block.gram: expected diagonal, block_diagonal or full");
}

FaultSpec parse_fault(const json &j, const std::string &path)
{
    Section s(j, path);
    FaultSpec f;
    s.get("victim", f.victim);
    std::string trigger = "iteration", kind = "hard";
    s.get("trigger", trigger);
    s.get("kind", kind);
    if (trigger == "iteration")
        f.trigger = sim::FaultPlan::Trigger::iteration;
    else if (trigger == "superstep")
        f.trigger = sim::FaultPlan::Trigger::superstep;
    else
        throw ConfigError(path + ".trigger: expected iteration or superstep");
    if (kind == "hard")
        f.kind = sim::FaultPlan::Kind::hard;
    else if (kind == "soft")
        f.kind = sim::FaultPlan::Kind::soft;
    else
        throw ConfigError(path + ".kind: expected hard or soft");
    const bool has_at = s.has("at");
    const bool has_frac = s.has("at_fraction");
    if (has_at == has_frac) throw ConfigError(path + ": give exactly one of at, at_fraction");
    if (has_at) s.get("at", f.at);
    if (has_frac) {
        double frac = 0.0;
        s.get("at_fraction", frac);
        if (f.trigger != sim::FaultPlan::Trigger::iteration)
            throw ConfigError(path + ".at_fraction: only valid with the iteration trigger");
        f.at_fraction = frac;
    }
    s.done();
    return f;
}

} // namespace

void ExperimentConfig::validate() const
{
    if (matrix_file.empty()) {
        if (nx < 2 || ny < 2)
            throw ConfigError("problem: grid dims must be at least 2x2, got " + std::to_string(nx) + "x" +
                              std::to_string(ny));
        if (!(eps_x > 0.0 && eps_y > 0.0)) throw ConfigError("problem: eps_x and eps_y must be positive");
    }
    if (ranks < 1) throw ConfigError("partition.ranks must be >= 1");
    if (matrix_file.empty() && ranks > ny)
        throw ConfigError("partition.ranks exceeds the number of grid lines (" + std::to_string(ny) + ")");
    wrap("solver", [&] { solver.validate(); });
    if (block_k < 1) throw ConfigError("block.k must be >= 1");
    if (gram == GramMode::block_diagonal && (block_size < 1 || block_k % block_size != 0))
        throw ConfigError("block.block_size must divide block.k");
    wrap("resilience.codec", [&] { codec.validate(); });
    wrap("resilience", [&] { policy.validate(); });
    for (const auto &f : faults) {
        if (f.victim < 0 || f.victim >= ranks)
            throw ConfigError("resilience.faults: victim " + std::to_string(f.victim) + " out of range");
        if (f.at_fraction && !(*f.at_fraction >= 0.0 && *f.at_fraction <= 1.0))
            throw ConfigError("resilience.faults: at_fraction must lie in [0, 1]");
    }
    static const std::set<std::string> kinds = {"none", "jacobi", "ssor", "ilu0", "spai1", "sainv"};
    if (!kinds.count(precond.kind)) throw ConfigError("preconditioner.kind: unknown '" + precond.kind + "'");
}

bool ExperimentConfig::same_problem(const ExperimentConfig &o) const
{
    if (matrix_file != o.matrix_file || rhs != o.rhs || seed != o.seed) return false;
    if (!matrix_file.empty()) return true;
    return nx == o.nx && ny == o.ny && eps_x == o.eps_x && eps_y == o.eps_y;
}

ExperimentConfig parse_config(const std::string &text)
{
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Section top(root, "config");
    top.get("name", c.name);
    if (top.has("problem")) {
        Section s(top.raw("problem"), "problem");
        s.get("nx", c.nx);
        s.get("ny", c.ny);
        s.get("eps_x", c.eps_x);
        s.get("eps_y", c.eps_y);
        std::string rhs = "random";
        s.get("rhs", rhs);
        if (rhs == "random")
            c.rhs = RhsMode::random;
        else if (rhs == "ones")
            c.rhs = RhsMode::ones_solution;
        else
            throw ConfigError("problem.rhs: expected random or ones");
        s.get("seed", c.seed);
        s.get("matrix_file", c.matrix_file);
        s.done();
    }
    if (top.has("partition")) {
        Section s(top.raw("partition"), "partition");
        s.get("ranks", c.ranks);
        s.done();
    }
    if (top.has("solver")) {
        Section s(top.raw("solver"), "solver");
        std::string variant = krylov::to_string(c.solver.variant);
        s.get("variant", variant);
        c.solver.variant = wrap("solver.variant", [&] { return krylov::parse_variant(variant); });
        s.get("tol", c.solver.tol);
        s.get("maxit", c.solver.maxit);
        s.done();
    }
    if (top.has("preconditioner")) {
        Section s(top.raw("preconditioner"), "preconditioner");
        s.get("kind", c.precond.kind);
        s.get("relax", c.precond.relax);
        s.get("sainv_eps", c.precond.sainv_eps);
        s.get("sainv_omega", c.precond.sainv_omega);
        s.done();
    }
    if (top.has("block")) {
        Section s(top.raw("block"), "block");
        s.get("k", c.block_k);
        std::string gram = "diagonal";
        s.get("gram", gram);
        c.gram = parse_gram(gram);
        s.get("block_size", c.block_size);
        s.done();
    }
    if (top.has("resilience")) {
        Section s(top.raw("resilience"), "resilience");
        if (s.has("codec")) {
            Section cs(s.raw("codec"), "resilience.codec");
            std::string kind = to_string(c.codec.kind);
            cs.get("kind", kind);
            c.codec.kind = wrap("resilience.codec.kind", [&] { return resilience::parse_codec_kind(kind); });
            if (c.codec.tau <= 0.0) c.codec.tau = resilience::Codec{}.tau;
            cs.get("tau", c.codec.tau);
            cs.get("coupling", c.codec.coupling);
            cs.get("level", c.codec.level);
            cs.done();
        }
        std::string strategy = to_string(c.policy.strategy);
        s.get("strategy", strategy);
        c.policy.strategy = wrap("resilience.strategy", [&] { return resilience::parse_strategy(strategy); });
        s.get("frequency", c.policy.backup_frequency);
        std::string recon = to_string(c.policy.reconstitute);
        s.get("reconstitute", recon);
        c.policy.reconstitute =
            wrap("resilience.reconstitute", [&] { return resilience::parse_reconstitute(recon); });
        s.get("aux_tol", c.policy.aux_tol);
        s.get("aux_maxit", c.policy.aux_maxit);
        if (s.has("faults")) {
            const json &arr = s.raw("faults");
            if (!arr.is_array()) throw ConfigError("resilience.faults: expected an array");
            for (std::size_t i = 0; i < arr.size(); ++i)
                c.faults.push_back(parse_fault(arr[i], "resilience.faults[" + std::to_string(i) + "]"));
        }
        s.done();
    }
    std::string engine = to_string(c.engine);
    top.get("engine", engine);
    c.engine = parse_engine(engine);
    if (top.has("output")) {
        Section s(top.raw("output"), "output");
        s.get("dir", c.out_dir);
        s.done();
    }
    top.done();
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

} // namespace ftk::cli
