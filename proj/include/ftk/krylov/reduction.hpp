#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftk/sim/world.hpp"

namespace ftk::krylov {

struct ReductionCounts {
    std::uint64_t iter = 0;       ///< reductions tagged "iter"
    std::uint64_t overlapped = 0; ///< of those, issued with overlapping work
    std::uint64_t setup = 0;      ///< everything else (initial residual, restarts)
};

/// Where a solver sends its fused inner products.
///
/// `dots` takes rank-local partial sums and returns a token for the global
/// sums. The solver calls `mark` around work it overlaps with an
/// outstanding reduction.
class ReductionChannel {
public:
    virtual ~ReductionChannel() = default;

    sim::CompletionToken<std::vector<double>> dots(std::vector<double> partials, sim::ReduceTag tag);
    virtual void mark(const std::string &what, bool begin) { (void)what, (void)begin; }

    const ReductionCounts &counts() const { return counts_; }

protected:
    virtual sim::CompletionToken<std::vector<double>> issue(std::vector<double> partials,
                                                           const sim::ReduceTag &tag) = 0;

private:
    ReductionCounts counts_;
};

/// Single-process channel: results are ready immediately.
class LocalReduction final : public ReductionChannel {
protected:
    sim::CompletionToken<std::vector<double>> issue(std::vector<double> partials,
                                                   const sim::ReduceTag &tag) override;
};

/// Routes reductions through a simulated communicator.
class CommReduction final : public ReductionChannel {
public:
    explicit CommReduction(sim::SimCommunicator comm) : comm_(std::move(comm)) {}

    void set_comm(sim::SimCommunicator comm) { comm_ = std::move(comm); }
    const sim::SimCommunicator &comm() const { return comm_; }
    void mark(const std::string &what, bool begin) override { comm_.mark_work(what, begin); }

protected:
    sim::CompletionToken<std::vector<double>> issue(std::vector<double> partials,
                                                   const sim::ReduceTag &tag) override;

private:
    sim::SimCommunicator comm_;
};

} // namespace ftk::krylov
