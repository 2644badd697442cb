#pragma once

#include <limits>

#include "ftk/preconditioner.hpp"
#include "ftk/sparse.hpp"

namespace ftk {

/// Drop tolerance ε (relative to max|A_ij|) and row cap factor ω (multiples
/// of the average row density of A). ω = ∞ disables the cap.
struct SainvConfig {
    double eps = 0.0;
    double omega = std::numeric_limits<double>::infinity();

    void validate() const;
    /// Maximum stored entries per z-vector for a matrix with `nnz` entries
    /// and `n` rows: round(ω·nnz/n), at least 2.
    int row_cap(std::size_t nnz, int n) const;
};

/// Factored approximate inverse A⁻¹ ≈ Z D⁻¹ Zᵀ. Column i of Z is z_i.
struct SainvFactors {
    CsrMatrix z;
    Vector d;
};

/// Right-looking A-biconjugation with drop tolerance and capped row storage.
/// Requires symmetric positive definite A; a non-positive pivot raises Breakdown.
SainvFactors sainv(const CsrMatrix &a, const SainvConfig &cfg);

/// Z D⁻¹ Zᵀ x
Vector sainv_apply(const SainvFactors &f, std::span<const double> x);

class SainvPreconditioner final : public Preconditioner {
public:
    explicit SainvPreconditioner(SainvFactors f);
    std::size_t size() const override { return factors_.d.size(); }
    void apply(std::span<const double> r, std::span<double> z) const override;
    std::string name() const override { return "sainv"; }
    using Preconditioner::apply;

    const SainvFactors &factors() const { return factors_; }

private:
    SainvFactors factors_;
    CsrMatrix zt_;
};

} // namespace ftk
