#include "ftk/krylov/operator.hpp"

namespace ftk::krylov {

DistributedOperator::DistributedOperator(sim::SimCommunicator comm, const Partition &part, int rank,
                                         LocalSystem sys)
    : comm_(std::move(comm)), part_(&part), rank_(rank), sys_(std::move(sys))
{
}

void DistributedOperator::apply(std::span<const double> x, std::span<double> y)
{
    require_dims(x.size() == size() && y.size() == size(), "DistributedOperator: length mismatch");
    const auto halo = comm_.halo_exchange(*part_, x).get();
    spmv(sys_.a_ff, x, y);
    if (halo.empty()) return;
    Vector coupling(size());
    spmv(sys_.a_fh, halo, coupling);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += coupling[i];
}

} // namespace ftk::krylov
