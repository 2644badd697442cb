#include <doctest.h>

#include <string>

#include "ftk/error.hpp"
#include "ftk/grid.hpp"
#include "ftk/krylov/block_cg.hpp"
#include "support.hpp"

using namespace ftk;

namespace {

krylov::SolverConfig classic(double tol = 1e-8, int maxit = 1000)
{
    krylov::SolverConfig c;
    c.tol = tol;
    c.maxit = maxit;
    return c;
}

krylov::BlockConfig mode(GramMode m, std::size_t bs = 1)
{
    krylov::BlockConfig c;
    c.mode = m;
    c.block_size = bs;
    return c;
}

MultiVector random_block(ftk::Rng &rng, std::size_t n, std::size_t k)
{
    MultiVector b(n, k);
    for (std::size_t j = 0; j < k; ++j) b.set_column(j, testing::random_vector(rng, n));
    return b;
}

} // namespace

TEST_CASE("k = 1 reproduces scalar PCG bit for bit in every mode")
{
    const auto a = assemble_poisson({12, 12, 1.0}, {1.0, 0.1});
    ftk::Rng rng(1);
    const auto b = random_block(rng, 144, 1);
    JacobiPreconditioner m(a);
    const auto scalar = krylov::solve(a, b.column(0), m, classic());
    for (auto gm : {GramMode::diagonal, GramMode::block_diagonal, GramMode::full}) {
        const auto res = krylov::block_solve(a, b, m, classic(), mode(gm));
        CHECK(res.converged);
        CHECK(res.x.column(0) == scalar.x);
        REQUIRE(res.columns[0].history.size() == scalar.record.history.size());
        for (std::size_t i = 0; i < scalar.record.history.size(); ++i)
            CHECK(res.columns[0].history[i].residual_norm == scalar.record.history[i].residual_norm);
    }
}

TEST_CASE("diagonal mode on 32x32 with four right-hand sides equals four scalar solves")
{
    const auto a = assemble_poisson({32, 32, 1.0});
    ftk::Rng rng(2);
    const auto b = random_block(rng, 1024, 4);
    JacobiPreconditioner m(a);
    const auto res = krylov::block_solve(a, b, m, classic(), mode(GramMode::diagonal));
    CHECK(res.converged);
    for (std::size_t j = 0; j < 4; ++j) {
        const auto s = krylov::solve(a, b.column(j), m, classic());
        REQUIRE(res.columns[j].history.size() == s.record.history.size());
        for (std::size_t i = 0; i < s.record.history.size(); ++i)
            CHECK(testing::rel_diff(res.columns[j].history[i].residual_norm, s.record.history[i].residual_norm) <=
                  1e-10);
    }
}

TEST_CASE("two reductions per iteration regardless of k")
{
    const auto a = assemble_poisson({10, 10, 1.0});
    ftk::Rng rng(3);
    const auto b = random_block(rng, 100, 5);
    krylov::LocalReduction ch;
    const auto res = krylov::block_solve(a, b, JacobiPreconditioner(a), classic(), mode(GramMode::full), ch);
    CHECK(res.reductions == 2u * static_cast<std::uint64_t>(res.iterations));
}

TEST_CASE("full mode handles linearly dependent right-hand sides")
{
    const auto a = assemble_poisson({32, 32, 1.0}, {1.0, 0.05});
    ftk::Rng rng(4);
    const auto u = testing::random_vector(rng, 1024), v = testing::random_vector(rng, 1024);
    MultiVector b(1024, 4);
    const double c[4][2] = {{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {2.0, -0.5}};
    for (std::size_t i = 0; i < 1024; ++i)
        for (std::size_t j = 0; j < 4; ++j) b(i, j) = c[j][0] * u[i] + c[j][1] * v[i];
    JacobiPreconditioner m(a);
    const auto diag = krylov::block_solve(a, b, m, classic(), mode(GramMode::diagonal));
    const auto full = krylov::block_solve(a, b, m, classic(), mode(GramMode::full));
    REQUIRE(diag.converged);
    CHECK(full.converged);
    int worst = 0;
    for (const auto &col : diag.columns) worst = std::max(worst, col.iterations);
    CHECK(full.iterations <= worst);
    for (std::size_t j = 0; j < 4; ++j) {
        auto r = spmv(a, full.x.column(j));
        const auto bj = b.column(j);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = bj[i] - r[i];
        CHECK(norm2(r) <= 1e-8 * norm2(bj) * 1.0001);
    }
}

TEST_CASE("property: frozen columns are never touched again")
{
    ftk::Rng rng(5);
    for (int t = 0; t < 12; ++t) {
        const int n = 30 + static_cast<int>(rng.below(50));
        const auto a = testing::random_spd(rng, n, 0.1);
        const std::size_t bs = 1 + rng.below(2);
        const std::size_t k = bs * (1 + rng.below(3));
        auto b = random_block(rng, static_cast<std::size_t>(n), k);
        // spread convergence speed across columns
        for (std::size_t i = 0; i < b.rows(); ++i) b(i, 0) = 1.0;
        const GramMode gm = t % 3 == 0 ? GramMode::diagonal : (t % 3 == 1 ? GramMode::block_diagonal : GramMode::full);
        JacobiPreconditioner m(a);
        const auto all = krylov::block_solve(a, b, m, classic(1e-9), mode(gm, bs));
        REQUIRE(all.converged);
        for (std::size_t j = 0; j < k; ++j) {
            const int frozen_at = all.columns[j].iterations;
            if (frozen_at >= all.iterations) continue;
            const auto early = krylov::block_solve(a, b, m, classic(1e-9, frozen_at), mode(gm, bs));
            CHECK(early.x.column(j) == all.x.column(j));
        }
    }
}

TEST_CASE("zero right-hand side columns start converged")
{
    const auto a = assemble_poisson({8, 8, 1.0});
    ftk::Rng rng(6);
    auto b = random_block(rng, 64, 3);
    b.set_column(1, Vector(64, 0.0));
    const auto res = krylov::block_solve(a, b, JacobiPreconditioner(a), classic(), mode(GramMode::full));
    CHECK(res.converged);
    CHECK(res.x.column(1) == Vector(64, 0.0));
    CHECK(res.columns[1].iterations == 0);
}

TEST_CASE("an indefinite operator names the failing Gram block")
{
    const auto a = CsrMatrix::diagonal(Vector{1.0, -2.0});
    MultiVector b(2, 2, 1.0);
    try {
        krylov::block_solve(a, b, IdentityPreconditioner(2), classic(), mode(GramMode::diagonal));
        FAIL("expected a breakdown");
    } catch (const Breakdown &e) {
        CHECK(std::string(e.what()).find("columns {0}") != std::string::npos);
    }
}
