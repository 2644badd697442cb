#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>

#include "ftk/cli/config.hpp"
#include "ftk/cli/experiment.hpp"
#include "support.hpp"

using namespace ftk;
using namespace ftk::cli;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path root = FTK_TEST_OUT;

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path fresh_dir(const std::string &name)
{
    const auto d = root / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

fs::path write_file(const fs::path &p, const std::string &text)
{
    std::ofstream(p, std::ios::binary) << text;
    return p;
}

/// Runs the ftk binary; returns its exit status, console output in `log`.
int run_ftk(const std::string &args, std::string *log = nullptr)
{
    const auto out = root / "console.txt";
    const std::string cmd = std::string("\"") + FTK_CLI + "\" " + args + " > \"" + out.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    if (log) *log = slurp(out);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json summary(const fs::path &dir)
{
    return json::parse(slurp(dir / "summary.json"));
}

/// Rows of a CSV file with a header line, as strings.
std::vector<std::vector<std::string>> read_csv(const fs::path &p)
{
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

std::string matrix_market(const std::vector<double> &diag)
{
    std::ostringstream os;
    os << "%%MatrixMarket matrix coordinate real general\n"
       << diag.size() << ' ' << diag.size() << ' ' << diag.size() << '\n';
    for (std::size_t i = 0; i < diag.size(); ++i) os << i + 1 << ' ' << i + 1 << ' ' << diag[i] << '\n';
    return os.str();
}

const char *standard_faulttest = R"({"name":"std","problem":{"nx":32,"ny":32,"eps_y":0.01,"rhs":"random","seed":7},
  "partition":{"ranks":16},"preconditioner":{"kind":"ilu0"},
  "resilience":{"codec":{"kind":"%CODEC%"},"strategy":"%STRATEGY%","faults":[{"victim":3,"at_fraction":0.8}]}})";

std::string faulttest_config(const std::string &codec, const std::string &strategy)
{
    std::string s = standard_faulttest;
    s.replace(s.find("%CODEC%"), 7, codec);
    s.replace(s.find("%STRATEGY%"), 10, strategy);
    return s;
}

} // namespace

TEST_CASE("config schema is strict")
{
    CHECK_NOTHROW(parse_config("{}"));
    CHECK_THROWS_WITH_AS(parse_config(R"({"problem":{"nx":8,"nz":3}})"), doctest::Contains("problem.nz"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"solver":{"tolerance":1e-6}})"), doctest::Contains("unknown key"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"problem":{"nx":1,"ny":8}})"), doctest::Contains("2x2"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"problem":{"nx":"8"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"problem":{"nx":8.5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"solver":{"variant":"bicgstab"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"partition":{"ranks":40}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"resilience":{"faults":[{"victim":0}]}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"resilience":{"faults":[{"victim":0,"at":1,"at_fraction":0.5}]}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    const auto c = parse_config(R"({"problem":{"nx":8,"ny":6,"eps_y":0.1,"rhs":"ones","seed":3},
        "solver":{"variant":"pipelined","tol":1e-6},"resilience":{"codec":{"kind":"accuracy_bounded","tau":1e-4},
        "strategy":"local_auxiliary","frequency":2,"faults":[{"victim":0,"at":4,"kind":"soft"}]}})");
    CHECK(c.nx == 8);
    CHECK(c.ny == 6);
    CHECK(c.eps_y == 0.1);
    CHECK(c.rhs == RhsMode::ones_solution);
    CHECK(c.solver.variant == krylov::Variant::pipelined);
    CHECK(c.codec.kind == resilience::CodecKind::accuracy_bounded);
    CHECK(c.codec.tau == 1e-4);
    CHECK(c.policy.backup_frequency == 2);
    REQUIRE(c.faults.size() == 1);
    CHECK(c.faults[0].kind == sim::FaultPlan::Kind::soft);
    // switching the codec kind without a tau picks up the library default
    CHECK(parse_config(R"({"resilience":{"codec":{"kind":"accuracy_bounded"}}})").codec.tau ==
          resilience::Codec{}.tau);
}

TEST_CASE("generate: 8x8 isotropic matrix has 288 stored entries and is reproducible")
{
    const auto dir = fresh_dir("generate");
    const auto cfg = write_file(dir / "g.json", R"({"problem":{"nx":8,"ny":8,"rhs":"ones"}})");
    REQUIRE(run_ftk("generate --config \"" + cfg.string() + "\" --out \"" + (dir / "a").string() + "\"") == 0);
    REQUIRE(run_ftk("generate --config \"" + cfg.string() + "\" --out \"" + (dir / "b").string() + "\"") == 0);
    const auto mtx = slurp(dir / "a" / "matrix.mtx");
    CHECK(mtx.rfind("%%MatrixMarket matrix coordinate real general", 0) == 0);
    CHECK(mtx.find("\n64 64 288\n") != std::string::npos);
    for (const char *f : {"matrix.mtx", "rhs.txt", "x_exact.txt"}) {
        CAPTURE(f);
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    // the seed flag reaches the random right-hand side
    const auto rnd = write_file(dir / "r.json", R"({"problem":{"nx":8,"ny":8}})");
    REQUIRE(run_ftk("generate --config \"" + rnd.string() + "\" --seed 1 --out \"" + (dir / "s1").string() + "\"") == 0);
    REQUIRE(run_ftk("generate --config \"" + rnd.string() + "\" --seed 2 --out \"" + (dir / "s2").string() + "\"") == 0);
    CHECK(slurp(dir / "s1" / "rhs.txt") != slurp(dir / "s2" / "rhs.txt"));
}

TEST_CASE("generate rejects a one-line grid with a schema message")
{
    const auto dir = fresh_dir("generate_bad");
    const auto cfg = write_file(dir / "g.json", R"({"problem":{"nx":1,"ny":8}})");
    std::string log;
    CHECK(run_ftk("generate --config \"" + cfg.string() + "\" --out \"" + dir.string() + "\"", &log) == 4);
    CHECK(log.find("2x2") != std::string::npos);
}

TEST_CASE("solve: the identity converges in one iteration")
{
    const auto dir = fresh_dir("solve_identity");
    const auto mtx = write_file(dir / "eye.mtx", matrix_market(std::vector<double>(10, 1.0)));
    auto cfg = parse_config(R"({"problem":{"matrix_file":")" + mtx.string() + R"("},"preconditioner":{"kind":"none"}})");
    std::ostringstream console;
    CHECK(cmd_solve(cfg, dir / "out", console) == exit_converged);
    const auto s = summary(dir / "out");
    CHECK(s["result"]["iterations"] == 1);
    CHECK(s["result"]["converged"] == true);
    // header + initial residual + one iteration
    CHECK(read_csv(dir / "out" / "convergence.csv").size() == 2);
}

TEST_CASE("solve: classic and pipelined report reductions in the ratio 2:1")
{
    const auto dir = fresh_dir("solve_reductions");
    const std::string base = R"({"problem":{"nx":16,"ny":16,"seed":2},"partition":{"ranks":4},"solver":{"variant":")";
    const auto classic = write_file(dir / "c.json", base + R"(classic"}})");
    const auto pipe = write_file(dir / "p.json", base + R"(pipelined"}})");
    REQUIRE(run_ftk("solve --config \"" + classic.string() + "\" --out \"" + (dir / "c").string() + "\"") == 0);
    REQUIRE(run_ftk("solve --config \"" + pipe.string() + "\" --out \"" + (dir / "p").string() + "\"") == 0);
    const auto c = summary(dir / "c")["result"], p = summary(dir / "p")["result"];
    CHECK(c["reductions"].get<int>() == 2 * c["iterations"].get<int>());
    CHECK(p["reductions"].get<int>() == p["iterations"].get<int>());
    CHECK(p["overlapped"] == p["reductions"]);
    CHECK(c["overlapped"] == 0);
    REQUIRE(c["iterations"] == p["iterations"]);
    CHECK(c["reductions"].get<int>() == 2 * p["reductions"].get<int>());
    CHECK(c["vector_memory_units"] == 4);
    CHECK(p["vector_memory_units"] == 10);
}

TEST_CASE("solve: an indefinite matrix surfaces a breakdown")
{
    const auto dir = fresh_dir("solve_breakdown");
    write_file(dir / "neg.mtx", matrix_market({-2.0, -2.0, -2.0, -2.0, -2.0, -2.0}));
    const auto cfg = write_file(dir / "c.json", R"({"problem":{"matrix_file":")" + (dir / "neg.mtx").string() +
                                                   R"("},"partition":{"ranks":2},"preconditioner":{"kind":"none"}})");
    std::string log;
    CHECK(run_ftk("solve --config \"" + cfg.string() + "\" --out \"" + (dir / "out").string() + "\"", &log) == 3);
    const auto err = json::parse(slurp(dir / "out" / "error.json"));
    CHECK(err["error"].get<std::string>().find("breakdown") != std::string::npos);
    CHECK(log.find("breakdown") != std::string::npos);
}

TEST_CASE("solve: block mode writes per-column histories")
{
    const auto dir = fresh_dir("solve_block");
    const auto cfg = parse_config(R"({"problem":{"nx":12,"ny":12,"seed":1},"block":{"k":3,"gram":"full"}})");
    std::ostringstream console;
    CHECK(cmd_solve(cfg, dir, console) == exit_converged);
    const auto rows = read_csv(dir / "block_convergence.csv");
    REQUIRE(!rows.empty());
    std::set<std::string> cols;
    for (const auto &r : rows) cols.insert(r.at(1));
    CHECK(cols == std::set<std::string>{"0", "1", "2"});
}

TEST_CASE("faulttest: the standard adaptive scenario recovers")
{
    const auto dir = fresh_dir("faulttest_std");
    const auto cfg = write_file(dir / "c.json", faulttest_config("adaptive", "local_restore"));
    CHECK(run_ftk("faulttest --config \"" + cfg.string() + "\" --out \"" + (dir / "out").string() + "\"") == 2);
    const auto s = summary(dir / "out");
    CHECK(s["outcome"] == "recovered_converged");
    CHECK(s["extra_iterations"].get<int>() <= 3);
    CHECK(s["faults"][0]["at"].get<int>() ==
          static_cast<int>(std::lround(0.8 * s["fault_free_iterations"].get<int>())));
    const auto log = slurp(dir / "out" / "resilience.jsonl");
    CHECK(log.find("\"kind\":\"kill\"") != std::string::npos);
    CHECK(log.find("\"kind\":\"recover\"") != std::string::npos);
    const auto head = slurp(dir / "out" / "convergence.csv");
    CHECK(head.rfind("iteration,residual_norm,reductions_cum,overlapped_cum,compression_rate,"
                     "cumulative_backup_bytes\n",
                     0) == 0);
}

TEST_CASE("faulttest: zero-codec rollback costs more iterations than adaptive backups")
{
    auto run = [](const std::string &codec) {
        const auto dir = fresh_dir("faulttest_" + codec);
        std::ostringstream console;
        const int rc = cmd_faulttest(parse_config(faulttest_config(codec, "global_rollback")), dir, console);
        CHECK(rc == exit_recovered);
        return summary(dir)["result"]["iterations"].get<int>();
    };
    CHECK(run("zero") > run("adaptive"));
}

TEST_CASE("faulttest: losing every rank fails with a diagnosis")
{
    std::string faults;
    for (int r = 0; r < 4; ++r) faults += std::string(r ? "," : "") + R"({"victim":)" + std::to_string(r) + R"(,"at":3})";
    const auto dir = fresh_dir("faulttest_all");
    const auto cfg = write_file(dir / "c.json", R"({"problem":{"nx":16,"ny":16},"partition":{"ranks":4},
        "resilience":{"faults":[)" + faults + "]}}");
    CHECK(run_ftk("faulttest --config \"" + cfg.string() + "\" --out \"" + (dir / "out").string() + "\"") == 3);
    const auto s = summary(dir / "out");
    CHECK(s["outcome"] == "failed");
    CHECK(!s["diagnosis"].get<std::string>().empty());
}

TEST_CASE("faulttest without faults is a usage error")
{
    const auto dir = fresh_dir("faulttest_none");
    const auto cfg = write_file(dir / "c.json", R"({"problem":{"nx":8,"ny":8}})");
    CHECK(run_ftk("faulttest --config \"" + cfg.string() + "\" --out \"" + dir.string() + "\"") == 4);
}

TEST_CASE("compare: four variants on 64x64 agree for 30 iterations")
{
    const auto dir = fresh_dir("compare_variants");
    std::string args = "compare";
    for (const char *v : {"classic", "chronopoulos_gear", "gropp", "pipelined"}) {
        const auto p = write_file(dir / (std::string(v) + ".json"),
                                  std::string(R"({"name":")") + v +
                                      R"(","problem":{"nx":64,"ny":64,"seed":5},"partition":{"ranks":4},)" +
                                      R"("solver":{"variant":")" + v + R"("}})");
        args += " --config \"" + p.string() + "\"";
    }
    REQUIRE(run_ftk(args + " --out \"" + dir.string() + "\"") == 0);
    const auto rows = read_csv(dir / "compare.csv");
    REQUIRE(rows.size() > 30);
    for (std::size_t i = 0; i <= 30; ++i) {
        CAPTURE(i);
        REQUIRE(rows[i].size() == 5);
        const double ref = std::stod(rows[i][1]);
        for (int c = 2; c <= 4; ++c) CHECK(testing::rel_diff(std::stod(rows[i][c]), ref) <= 1e-6);
    }
    const auto sum = read_csv(dir / "compare_summary.csv");
    REQUIRE(sum.size() == 4);
    CHECK(sum[0][1] == "classic");
    CHECK(sum[3][1] == "pipelined");
}

TEST_CASE("compare: SPAI(1) needs no more iterations than Jacobi on the anisotropic problem")
{
    const auto dir = fresh_dir("compare_precond");
    const std::string problem = R"("problem":{"nx":32,"ny":32,"eps_y":0.01,"seed":7},"partition":{"ranks":4})";
    const auto j = parse_config(R"({"name":"jacobi",)" + problem + R"(,"preconditioner":{"kind":"jacobi"}})");
    const auto s = parse_config(R"({"name":"spai1",)" + problem + R"(,"preconditioner":{"kind":"spai1"}})");
    std::ostringstream console;
    REQUIRE(cmd_compare({j, s}, dir, console) == exit_converged);
    const auto sum = read_csv(dir / "compare_summary.csv");
    REQUIRE(sum.size() == 2);
    CHECK(std::stoi(sum[1][5]) <= std::stoi(sum[0][5]));
}

TEST_CASE("compare: usage errors")
{
    const auto dir = fresh_dir("compare_bad");
    const auto a = write_file(dir / "a.json", R"({"problem":{"nx":8,"ny":8}})");
    const auto b = write_file(dir / "b.json", R"({"problem":{"nx":8,"ny":10}})");
    CHECK(run_ftk("compare --config \"" + a.string() + "\" --out \"" + dir.string() + "\"") == 4);
    CHECK(run_ftk("compare --config \"" + a.string() + "\" --config \"" + b.string() + "\" --out \"" + dir.string() +
              "\"") == 4);
}

TEST_CASE("exit codes for malformed invocations")
{
    CHECK(run_ftk("") == 4);
    CHECK(run_ftk("solve") == 4);
    CHECK(run_ftk("solve --config /nonexistent/file.json") == 4);
    CHECK(run_ftk("frobnicate") == 4);
    const auto dir = fresh_dir("exit_codes");
    const auto cfg = write_file(dir / "c.json", R"({"problem":{"nx":8,"ny":8}})");
    CHECK(run_ftk("solve --config \"" + cfg.string() + "\" --engine warp") == 4);
    CHECK(run_ftk("solve --config \"" + cfg.string() + "\" --out \"" + dir.string() + "\"") == 0);
}

TEST_CASE("reruns with the same seed write identical files")
{
    const auto dir = fresh_dir("determinism");
    const auto cfg = write_file(dir / "c.json", faulttest_config("accuracy_bounded", "local_auxiliary"));
    for (const char *sub : {"a", "b"})
        REQUIRE(run_ftk("faulttest --config \"" + cfg.string() + "\" --out \"" + (dir / sub).string() + "\"") == 2);
    for (const char *f : {"summary.json", "convergence.csv", "resilience.jsonl"}) {
        CAPTURE(f);
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    // the threaded engine gives the same numbers
    REQUIRE(run_ftk("faulttest --config \"" + cfg.string() + "\" --engine threaded --out \"" + (dir / "t").string() +
                "\"") == 2);
    CHECK(slurp(dir / "a" / "convergence.csv") == slurp(dir / "t" / "convergence.csv"));
}
