#include "ftk/krylov/cg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ftk::krylov {

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::classic: return "classic";
    case Variant::chronopoulos_gear: return "chronopoulos_gear";
    case Variant::gropp: return "gropp";
    case Variant::pipelined: return "pipelined";
    }
    return "unknown";
}

Variant parse_variant(const std::string &name)
{
    for (auto v : {Variant::classic, Variant::chronopoulos_gear, Variant::gropp, Variant::pipelined})
        if (to_string(v) == name) return v;
    throw InvalidArgument("unknown CG variant '" + name + "'");
}

void SolverConfig::validate() const
{
    require(tol > 0.0 && tol < 1.0, "solver: tol must lie in (0, 1)");
    require(maxit >= 1, "solver: maxit must be at least 1");
}

int KrylovState::vector_units() const
{
    int n = 0;
    for (const Vector *v : {&x, &r, &p, &q, &z, &w, &s, &t, &u, &v})
        if (!v->empty()) ++n;
    return n;
}

std::string ConvergenceRecord::to_csv() const
{
    std::ostringstream os;
    os.precision(17);
    os << "iteration,residual_norm,reductions_cum,overlapped_cum\n";
    for (const auto &h : history)
        os << h.iteration << ',' << h.residual_norm << ',' << h.reductions_cum << ',' << h.overlapped_cum << '\n';
    return os.str();
}

int memory_accounting(Variant v)
{
    switch (v) {
    case Variant::classic: return 4;
    case Variant::chronopoulos_gear: return 6;
    case Variant::gropp: return 6;
    case Variant::pipelined: return 10;
    }
    return 0;
}

int extra_vector_ops(Variant v)
{
    switch (v) {
    case Variant::classic: return 0;
    case Variant::chronopoulos_gear: return 1;
    case Variant::gropp: return 2;
    case Variant::pipelined: return 5;
    }
    return 0;
}

int reductions_per_iteration(Variant v)
{
    return v == Variant::classic || v == Variant::gropp ? 2 : 1;
}

bool overlapped(Variant v)
{
    return v == Variant::gropp || v == Variant::pipelined;
}

CgSolver::CgSolver(LinearOperator &a, const Preconditioner &m, ReductionChannel &channel, SolverConfig cfg)
    : a_(&a), m_(&m), channel_(&channel), cfg_(cfg)
{
    cfg_.validate();
    require_dims(m.size() == a.size(), "cg: preconditioner size differs from operator size");
}

void CgSolver::rebind(LinearOperator &a, ReductionChannel &channel)
{
    require_dims(a.size() == a_->size(), "cg: rebind to an operator of different size");
    a_ = &a;
    channel_ = &channel;
}

void CgSolver::start(std::span<const double> b, Vector x0, std::optional<double> reference_norm,
                     int first_iteration)
{
    const std::size_t n = a_->size();
    require_dims(b.size() == n, "cg: right-hand side length mismatch");
    if (x0.empty()) x0.assign(n, 0.0);
    require_dims(x0.size() == n, "cg: initial guess length mismatch");
    require(all_finite(b) && all_finite(x0), "cg: non-finite input");
    b_.assign(b.begin(), b.end());
    record_ = ConvergenceRecord{};
    record_.vector_memory_units = memory_accounting(cfg_.variant);
    record_.extra_vector_ops_units = extra_vector_ops(cfg_.variant);
    require(first_iteration >= 0, "cg: negative first iteration");
    iteration_ = first_iteration;
    st_ = KrylovState{};
    st_.x = std::move(x0);
    reference_ = reference_norm.value_or(-1.0);
    setup();
    record_.initial_residual = residual_;
    record_.iterations = iteration_;
    if (cfg_.record_history) record_.history.push_back({iteration_, residual_, 0, 0});
}

void CgSolver::restart(Vector x)
{
    require_dims(x.size() == a_->size(), "cg: restart vector length mismatch");
    require(all_finite(x), "cg: non-finite restart vector");
    st_ = KrylovState{};
    st_.x = std::move(x);
    setup();
}

std::vector<double> CgSolver::harvest(sim::CompletionToken<std::vector<double>> &tok)
{
    auto v = tok.get();
    if (!all_finite(v)) throw Divergence("cg: non-finite inner product");
    return v;
}

namespace {

/// r = b − A x
void residual(LinearOperator &a, std::span<const double> b, std::span<const double> x, Vector &r)
{
    r.assign(b.size(), 0.0);
    a.apply(x, r);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
}

void require_positive(double v, const char *what)
{
    if (!std::isfinite(v)) throw Divergence(std::string("cg: non-finite ") + what);
    if (!(v > 0.0)) {
        std::ostringstream os;
        os.precision(17);
        os << "cg: breakdown, " << what << " = " << v;
        throw Breakdown(os.str());
    }
}

} // namespace

void CgSolver::setup()
{
    const std::size_t n = a_->size();
    auto &s = st_;
    const auto before = channel_->counts();
    const sim::ReduceTag tag{"setup", false};
    residual(*a_, b_, s.x, s.r);
    double rr = 0.0;

    switch (cfg_.variant) {
    case Variant::classic: {
        s.q.assign(n, 0.0);
        m_->apply(s.r, s.q); // z lives in q's storage
        s.p = s.q;
        auto tok = channel_->dots({dot(s.p, s.r), dot(s.r, s.r)}, tag);
        const auto d = harvest(tok);
        s.rho = d[0];
        rr = d[1];
        break;
    }
    case Variant::chronopoulos_gear: {
        s.z.assign(n, 0.0);
        s.w.assign(n, 0.0);
        m_->apply(s.r, s.z);
        a_->apply(s.z, s.w);
        s.p.assign(n, 0.0);
        s.s.assign(n, 0.0);
        auto tok = channel_->dots({dot(s.z, s.r), dot(s.z, s.w), dot(s.r, s.r)}, tag);
        const auto d = harvest(tok);
        s.rho = d[0];
        s.delta = d[1];
        rr = d[2];
        break;
    }
    case Variant::gropp: {
        s.u.assign(n, 0.0);
        m_->apply(s.r, s.u);
        s.p = s.u;
        s.s.assign(n, 0.0);
        a_->apply(s.p, s.s);
        s.q.assign(n, 0.0);
        auto tok = channel_->dots({dot(s.u, s.r), dot(s.r, s.r)}, tag);
        const auto d = harvest(tok);
        s.rho = d[0];
        rr = d[1];
        break;
    }
    case Variant::pipelined: {
        s.p.assign(n, 0.0);
        m_->apply(s.r, s.p);
        s.q.assign(n, 0.0);
        a_->apply(s.p, s.q);
        auto tok = channel_->dots({dot(s.p, s.r), dot(s.p, s.q), dot(s.r, s.r)}, tag);
        s.s.assign(n, 0.0);
        s.t.assign(n, 0.0);
        m_->apply(s.q, s.s);
        a_->apply(s.s, s.t);
        s.z = s.p;
        s.w = s.q;
        s.u.assign(n, 0.0);
        s.v.assign(n, 0.0);
        const auto d = harvest(tok);
        s.rho = d[0];
        s.alpha = d[1];
        rr = d[2];
        break;
    }
    }

    residual_ = std::sqrt(rr);
    if (reference_ < 0.0) reference_ = residual_;
    const auto after = channel_->counts();
    record_.setup_reductions += after.setup - before.setup;
    fresh_ = true;
    record_.final_residual = residual_;
    record_.converged = residual_ <= cfg_.tol * reference_;
}

bool CgSolver::step()
{
    require(!done(), "cg: step after completion");
    const auto before = channel_->counts();
    ++iteration_;
    try {
        switch (cfg_.variant) {
        case Variant::classic: step_classic(); break;
        case Variant::chronopoulos_gear: step_chronopoulos_gear(); break;
        case Variant::gropp: step_gropp(); break;
        case Variant::pipelined: step_pipelined(); break;
        }
    } catch (...) {
        --iteration_; // an interrupted iteration does not count
        throw;
    }
    const auto after = channel_->counts();
    record_.reductions += after.iter - before.iter;
    record_.overlapped += after.overlapped - before.overlapped;
    record_.iterations = iteration_;
    if (cfg_.record_history)
        record_.history.push_back({iteration_, residual_, record_.reductions, record_.overlapped});
    return record_.converged;
}

void CgSolver::finish_iteration(double rnorm)
{
    residual_ = rnorm;
    record_.final_residual = rnorm;
    record_.converged = rnorm <= cfg_.tol * reference_;
    fresh_ = false;
}

const ConvergenceRecord &CgSolver::run()
{
    while (!done()) step();
    return record_;
}

void CgSolver::step_classic()
{
    auto &s = st_;
    const sim::ReduceTag tag{"iter", false};
    a_->apply(s.p, s.q);
    auto tok1 = channel_->dots({dot(s.p, s.q)}, tag);
    const double pq = harvest(tok1)[0];
    require_positive(pq, "<p, Ap>");
    const double lambda = s.rho / pq;
    axpy(lambda, s.p, s.x);
    axpy(-lambda, s.q, s.r);
    m_->apply(s.r, s.q); // z
    auto tok2 = channel_->dots({dot(s.q, s.r), dot(s.r, s.r)}, tag);
    const auto d = harvest(tok2);
    finish_iteration(std::sqrt(d[1]));
    if (record_.converged) return;
    require_positive(d[0], "<z, r>");
    const double beta = d[0] / s.rho;
    s.rho = d[0];
    s.alpha = pq;
    xpby(s.q, beta, s.p);
}

void CgSolver::step_chronopoulos_gear()
{
    auto &s = st_;
    const sim::ReduceTag tag{"iter", false};
    double beta = 0.0;
    double step = 0.0;
    if (fresh_) {
        require_positive(s.delta, "<z, Az>");
        step = s.rho / s.delta;
        copy(s.z, s.p);
        copy(s.w, s.s);
    } else {
        beta = s.rho / s.alpha_tilde; // alpha_tilde holds the previous γ
        const double denom = s.delta - beta * s.rho / s.alpha;
        require_positive(denom, "<p, Ap>");
        step = s.rho / denom;
        xpby(s.z, beta, s.p);
        xpby(s.w, beta, s.s);
    }
    s.alpha = step;
    axpy(step, s.p, s.x);
    axpy(-step, s.s, s.r);
    m_->apply(s.r, s.z);
    a_->apply(s.z, s.w);
    auto tok = channel_->dots({dot(s.z, s.r), dot(s.z, s.w), dot(s.r, s.r)}, tag);
    const auto d = harvest(tok);
    finish_iteration(std::sqrt(d[2]));
    if (record_.converged) return;
    require_positive(d[0], "<z, r>");
    s.alpha_tilde = s.rho;
    s.rho = d[0];
    s.delta = d[1];
}

void CgSolver::step_gropp()
{
    auto &s = st_;
    const sim::ReduceTag tag{"iter", true};
    auto tok1 = channel_->dots({dot(s.p, s.s)}, tag);
    channel_->mark("precondition", true);
    m_->apply(s.s, s.q);
    channel_->mark("precondition", false);
    const double delta = harvest(tok1)[0];
    require_positive(delta, "<p, Ap>");
    const double step = s.rho / delta;
    axpy(step, s.p, s.x);
    axpy(-step, s.s, s.r);
    axpy(-step, s.q, s.u);
    auto tok2 = channel_->dots({dot(s.u, s.r), dot(s.r, s.r)}, tag);
    channel_->mark("operator", true);
    a_->apply(s.u, s.q); // w = A u reuses q
    channel_->mark("operator", false);
    const auto d = harvest(tok2);
    finish_iteration(std::sqrt(d[1]));
    if (record_.converged) return;
    require_positive(d[0], "<u, r>");
    const double beta = d[0] / s.rho;
    s.rho = d[0];
    s.alpha = delta;
    xpby(s.u, beta, s.p);
    xpby(s.q, beta, s.s);
}

void CgSolver::step_pipelined()
{
    auto &s = st_;
    const sim::ReduceTag tag{"iter", true};
    require_positive(s.alpha, "<p, Ap>");
    const double lambda = s.rho / s.alpha;
    axpy(lambda, s.p, s.x);
    axpy(-lambda, s.q, s.r);
    axpy(-lambda, s.s, s.z);
    axpy(-lambda, s.t, s.w);
    auto tok = channel_->dots({dot(s.z, s.r), dot(s.z, s.w), dot(s.r, s.r)}, tag);
    channel_->mark("precondition+operator", true);
    m_->apply(s.w, s.v);
    a_->apply(s.v, s.u);
    channel_->mark("precondition+operator", false);
    const auto d = harvest(tok);
    finish_iteration(std::sqrt(d[2]));
    if (record_.converged) return;
    require_positive(d[0], "<z, r>");
    const double beta = d[0] / s.rho;
    // ⟨p', q'⟩ = ⟨z, w⟩ − β² ⟨p, q⟩ for the updated directions.
    const double next_alpha = d[1] - beta * beta * s.alpha;
    s.rho = d[0];
    s.alpha_tilde = d[1];
    s.alpha = next_alpha;
    xpby(s.v, beta, s.s);
    xpby(s.u, beta, s.t);
    xpby(s.z, beta, s.p);
    xpby(s.w, beta, s.q);
}

SolveResult solve(LinearOperator &a, std::span<const double> b, const Preconditioner &m,
                  const SolverConfig &cfg, ReductionChannel &channel, std::optional<Vector> x0)
{
    CgSolver solver(a, m, channel, cfg);
    solver.start(b, x0.value_or(Vector{}));
    solver.run();
    return {solver.state().x, solver.record()};
}

SolveResult solve(const CsrMatrix &a, std::span<const double> b, const Preconditioner &m,
                  const SolverConfig &cfg, std::optional<Vector> x0)
{
    CsrOperator op(a);
    LocalReduction channel;
    return solve(op, b, m, cfg, channel, std::move(x0));
}

namespace {

double drift(std::span<const double> kept, std::span<const double> fresh)
{
    Vector diff(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) diff[i] = kept[i] - fresh[i];
    const double scale = std::max(norm2(fresh), norm2(kept));
    return scale > 0.0 ? norm2(diff) / scale : 0.0;
}

} // namespace

double pipelined_consistency_check(const KrylovState &s, const CsrMatrix &a, const Preconditioner &m)
{
    const std::size_t n = static_cast<std::size_t>(a.rows());
    for (const Vector *v : {&s.r, &s.z, &s.w, &s.s, &s.t, &s.p, &s.q})
        require_dims(v->size() == n, "pipelined_consistency_check: state is not a pipelined state");
    Vector tmp(n);
    double worst = 0.0;
    m.apply(s.r, tmp);
    worst = std::max(worst, drift(s.z, tmp));
    spmv(a, s.z, tmp);
    worst = std::max(worst, drift(s.w, tmp));
    m.apply(s.q, tmp);
    worst = std::max(worst, drift(s.s, tmp));
    spmv(a, s.s, tmp);
    worst = std::max(worst, drift(s.t, tmp));
    spmv(a, s.p, tmp);
    worst = std::max(worst, drift(s.q, tmp));
    return worst;
}

} // namespace ftk::krylov
