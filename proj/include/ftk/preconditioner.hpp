#pragma once

#include <memory>
#include <span>
#include <string>

#include "ftk/sparse.hpp"

namespace ftk {

/// Linear operator approximating A⁻¹.
class Preconditioner {
public:
    virtual ~Preconditioner() = default;

    virtual std::size_t size() const = 0;
    virtual void apply(std::span<const double> r, std::span<double> z) const = 0;
    /// Columnwise application on an interleaved block.
    virtual void apply(const MultiVector &r, MultiVector &z) const;
    virtual std::string name() const = 0;

    Vector apply(std::span<const double> r) const;
};

class IdentityPreconditioner final : public Preconditioner {
public:
    explicit IdentityPreconditioner(std::size_t n) : n_(n) {}
    std::size_t size() const override { return n_; }
    void apply(std::span<const double> r, std::span<double> z) const override;
    void apply(const MultiVector &r, MultiVector &z) const override;
    std::string name() const override { return "none"; }
    using Preconditioner::apply;

private:
    std::size_t n_;
};

/// z = D⁻¹ r.
class JacobiPreconditioner final : public Preconditioner {
public:
    explicit JacobiPreconditioner(const CsrMatrix &a);
    std::size_t size() const override { return inv_diag_.size(); }
    void apply(std::span<const double> r, std::span<double> z) const override;
    void apply(const MultiVector &r, MultiVector &z) const override;
    std::string name() const override { return "jacobi"; }
    using Preconditioner::apply;

private:
    Vector inv_diag_;
};

/// Symmetric SOR: z = ω(2−ω) (D+ωU)⁻¹ D (D+ωL)⁻¹ r.
class SsorPreconditioner final : public Preconditioner {
public:
    SsorPreconditioner(const CsrMatrix &a, double relax);
    std::size_t size() const override { return diag_.size(); }
    void apply(std::span<const double> r, std::span<double> z) const override;
    std::string name() const override { return "ssor"; }
    using Preconditioner::apply;

private:
    CsrMatrix a_;
    Vector diag_;
    double relax_;
};

/// Incomplete LU with the sparsity of A (no fill).
class Ilu0Preconditioner final : public Preconditioner {
public:
    explicit Ilu0Preconditioner(const CsrMatrix &a);
    std::size_t size() const override { return static_cast<std::size_t>(lu_.rows()); }
    void apply(std::span<const double> r, std::span<double> z) const override;
    std::string name() const override { return "ilu0"; }
    using Preconditioner::apply;

    /// Combined factors: strictly lower part is L (unit diagonal implied), rest is U.
    const CsrMatrix &factors() const { return lu_; }

private:
    CsrMatrix lu_;
    std::vector<int> diag_pos_;
};

/// Applies an explicitly assembled approximate inverse: z = M r.
class MatrixPreconditioner final : public Preconditioner {
public:
    MatrixPreconditioner(CsrMatrix m, std::string name);
    std::size_t size() const override { return static_cast<std::size_t>(m_.rows()); }
    void apply(std::span<const double> r, std::span<double> z) const override;
    void apply(const MultiVector &r, MultiVector &z) const override;
    std::string name() const override { return name_; }
    using Preconditioner::apply;

    const CsrMatrix &matrix() const { return m_; }

private:
    CsrMatrix m_;
    std::string name_;
};

/// Sparse approximate inverse with the pattern of A: column j of M minimizes
/// ‖A m_j − e_j‖₂ over that pattern, each column solved by Householder QR.
/// Throws Breakdown naming the column if a local subproblem is rank deficient.
CsrMatrix spai1(const CsrMatrix &a);

enum class SpaiUse { richardson, cg };

/// SPAI-1 preconditioner; for CG the symmetric part (M + Mᵀ)/2 is applied.
std::unique_ptr<Preconditioner> make_spai1(const CsrMatrix &a, SpaiUse use = SpaiUse::cg);

struct PreconditionerSpec {
    std::string kind = "jacobi"; // none | jacobi | ssor | ilu0 | spai1 | sainv
    double relax = 1.0;          // ssor
    double sainv_eps = 1e-3;     // sainv drop tolerance
    double sainv_omega = 2.0;    // sainv row cap factor
};

std::unique_ptr<Preconditioner> make_preconditioner(const PreconditionerSpec &spec,
                                                    const CsrMatrix &a);

} // namespace ftk
