#pragma once

#include <span>

#include "ftk/grid.hpp"
#include "ftk/sim/world.hpp"
#include "ftk/sparse.hpp"

namespace ftk::krylov {

/// y = A x on (rank-local) vectors. Not const: distributed application talks.
class LinearOperator {
public:
    virtual ~LinearOperator() = default;
    virtual std::size_t size() const = 0;
    virtual void apply(std::span<const double> x, std::span<double> y) = 0;
};

class CsrOperator final : public LinearOperator {
public:
    explicit CsrOperator(const CsrMatrix &a) : a_(&a) {}
    std::size_t size() const override { return static_cast<std::size_t>(a_->rows()); }
    void apply(std::span<const double> x, std::span<double> y) override { spmv(*a_, x, y); }

private:
    const CsrMatrix *a_;
};

/// Owned rows of a partitioned matrix: y_F = A_FF x_F + A_FH x_H, with the
/// halo values x_H fetched from the owners before every product.
class DistributedOperator final : public LinearOperator {
public:
    DistributedOperator(sim::SimCommunicator comm, const Partition &part, int rank, LocalSystem sys);

    std::size_t size() const override { return static_cast<std::size_t>(sys_.a_ff.rows()); }
    void apply(std::span<const double> x, std::span<double> y) override;

    void set_comm(sim::SimCommunicator comm) { comm_ = std::move(comm); }
    const LocalSystem &local() const { return sys_; }

private:
    sim::SimCommunicator comm_;
    const Partition *part_;
    int rank_;
    LocalSystem sys_;
};

} // namespace ftk::krylov
