#include "ftk/krylov/reduction.hpp"

namespace ftk::krylov {

sim::CompletionToken<std::vector<double>> ReductionChannel::dots(std::vector<double> partials,
                                                                sim::ReduceTag tag)
{
    auto token = issue(std::move(partials), tag);
    if (tag.phase == "iter") {
        ++counts_.iter;
        if (tag.overlapped) ++counts_.overlapped;
    } else {
        ++counts_.setup;
    }
    return token;
}

sim::CompletionToken<std::vector<double>> LocalReduction::issue(std::vector<double> partials,
                                                               const sim::ReduceTag &)
{
    return sim::CompletionToken<std::vector<double>>::completed(std::move(partials));
}

sim::CompletionToken<std::vector<double>> CommReduction::issue(std::vector<double> partials,
                                                              const sim::ReduceTag &tag)
{
    return comm_.fused_allreduce(std::move(partials), tag);
}

} // namespace ftk::krylov
