#include "ftk/preconditioner.hpp"

#include <cmath>
#include <string>

#include "ftk/error.hpp"
#include "ftk/sainv.hpp"

namespace ftk {

void Preconditioner::apply(const MultiVector &r, MultiVector &z) const
{
    require_dims(r.rows() == size() && z.rows() == size() && r.cols() == z.cols(),
                 name() + ": block shape mismatch");
    Vector zc(size());
    for (std::size_t j = 0; j < r.cols(); ++j) {
        const Vector rc = r.column(j);
        apply(rc, zc);
        z.set_column(j, zc);
    }
}

Vector Preconditioner::apply(std::span<const double> r) const
{
    Vector z(size());
    apply(r, z);
    return z;
}

void IdentityPreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    copy(r, z);
}

void IdentityPreconditioner::apply(const MultiVector &r, MultiVector &z) const { z = r; }

JacobiPreconditioner::JacobiPreconditioner(const CsrMatrix &a)
{
    require_dims(a.rows() == a.cols(), "jacobi: matrix not square");
    inv_diag_ = a.diagonal_values();
    for (std::size_t i = 0; i < inv_diag_.size(); ++i) {
        if (inv_diag_[i] == 0.0)
            throw Breakdown("jacobi: singular diagonal at row " + std::to_string(i));
        inv_diag_[i] = 1.0 / inv_diag_[i];
    }
}

void JacobiPreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    require_dims(r.size() == size() && z.size() == size(), "jacobi: length mismatch");
    for (std::size_t i = 0; i < r.size(); ++i) z[i] = inv_diag_[i] * r[i];
}

void JacobiPreconditioner::apply(const MultiVector &r, MultiVector &z) const
{
    require_dims(r.rows() == size() && z.rows() == size() && r.cols() == z.cols(),
                 "jacobi: block shape mismatch");
    for (std::size_t i = 0; i < r.rows(); ++i) {
        const auto ri = r.row(i);
        auto zi = z.row(i);
        for (std::size_t j = 0; j < ri.size(); ++j) zi[j] = inv_diag_[i] * ri[j];
    }
}

SsorPreconditioner::SsorPreconditioner(const CsrMatrix &a, double relax) : a_(a), relax_(relax)
{
    require_dims(a.rows() == a.cols(), "ssor: matrix not square");
    require(relax > 0.0 && relax < 2.0, "ssor: relaxation must lie in (0, 2)");
    diag_ = a.diagonal_values();
    for (std::size_t i = 0; i < diag_.size(); ++i)
        if (diag_[i] == 0.0) throw Breakdown("ssor: singular diagonal at row " + std::to_string(i));
}

void SsorPreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    require_dims(r.size() == size() && z.size() == size(), "ssor: length mismatch");
    const int n = a_.rows();
    const double w = relax_;
    Vector y(size());
    // (D + ωL) y = r
    for (int i = 0; i < n; ++i) {
        double s = r[i];
        const auto rc = a_.row_cols(i);
        const auto rv = a_.row_values(i);
        for (std::size_t k = 0; k < rc.size() && rc[k] < i; ++k) s -= w * rv[k] * y[rc[k]];
        y[i] = s / diag_[i];
    }
    for (int i = 0; i < n; ++i) y[i] *= diag_[i];
    // (D + ωU) z = D y
    for (int i = n - 1; i >= 0; --i) {
        double s = y[i];
        const auto rc = a_.row_cols(i);
        const auto rv = a_.row_values(i);
        for (std::size_t k = rc.size(); k-- > 0 && rc[k] > i;) s -= w * rv[k] * z[rc[k]];
        z[i] = s / diag_[i];
    }
    scale(w * (2.0 - w), z);
}

Ilu0Preconditioner::Ilu0Preconditioner(const CsrMatrix &a) : lu_(a)
{
    require_dims(a.rows() == a.cols(), "ilu0: matrix not square");
    const int n = a.rows();
    const auto &off = lu_.row_offsets();
    const auto &col = lu_.col_indices();
    auto &val = lu_.values();
    diag_pos_.assign(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i)
        for (int k = off[i]; k < off[i + 1]; ++k)
            if (col[k] == i) diag_pos_[i] = k;

    std::vector<int> pos(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        if (diag_pos_[i] < 0) throw Breakdown("ilu0: zero pivot at row " + std::to_string(i));
        for (int k = off[i]; k < off[i + 1]; ++k) pos[col[k]] = k;
        for (int k = off[i]; k < off[i + 1] && col[k] < i; ++k) {
            const int p = col[k];
            const double pivot = val[diag_pos_[p]];
            val[k] /= pivot;
            for (int m = diag_pos_[p] + 1; m < off[p + 1]; ++m)
                if (pos[col[m]] >= 0) val[pos[col[m]]] -= val[k] * val[m];
        }
        for (int k = off[i]; k < off[i + 1]; ++k) pos[col[k]] = -1;
        if (val[diag_pos_[i]] == 0.0 || !std::isfinite(val[diag_pos_[i]]))
            throw Breakdown("ilu0: zero pivot at row " + std::to_string(i));
    }
}

void Ilu0Preconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    require_dims(r.size() == size() && z.size() == size(), "ilu0: length mismatch");
    const int n = lu_.rows();
    const auto &off = lu_.row_offsets();
    const auto &col = lu_.col_indices();
    const auto &val = lu_.values();
    for (int i = 0; i < n; ++i) {
        double s = r[i];
        for (int k = off[i]; k < diag_pos_[i]; ++k) s -= val[k] * z[col[k]];
        z[i] = s;
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = z[i];
        for (int k = diag_pos_[i] + 1; k < off[i + 1]; ++k) s -= val[k] * z[col[k]];
        z[i] = s / val[diag_pos_[i]];
    }
}

MatrixPreconditioner::MatrixPreconditioner(CsrMatrix m, std::string name)
    : m_(std::move(m)), name_(std::move(name))
{
    require_dims(m_.rows() == m_.cols(), "matrix preconditioner: not square");
}

void MatrixPreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    spmv(m_, r, z);
}

void MatrixPreconditioner::apply(const MultiVector &r, MultiVector &z) const
{
    spmm_multi(m_, r, z);
}

std::unique_ptr<Preconditioner> make_spai1(const CsrMatrix &a, SpaiUse use)
{
    CsrMatrix m = spai1(a);
    if (use == SpaiUse::cg) return std::make_unique<MatrixPreconditioner>(symmetric_part(m), "spai1");
    return std::make_unique<MatrixPreconditioner>(std::move(m), "spai1");
}

std::unique_ptr<Preconditioner> make_preconditioner(const PreconditionerSpec &spec,
                                                    const CsrMatrix &a)
{
    if (spec.kind == "none") return std::make_unique<IdentityPreconditioner>(a.rows());
    if (spec.kind == "jacobi") return std::make_unique<JacobiPreconditioner>(a);
    if (spec.kind == "ssor") return std::make_unique<SsorPreconditioner>(a, spec.relax);
    if (spec.kind == "ilu0") return std::make_unique<Ilu0Preconditioner>(a);
    if (spec.kind == "spai1") return make_spai1(a, SpaiUse::cg);
    if (spec.kind == "sainv")
        return std::make_unique<SainvPreconditioner>(
            sainv(a, SainvConfig{spec.sainv_eps, spec.sainv_omega}));
    throw InvalidArgument("unknown preconditioner kind '" + spec.kind + "'");
}

} // namespace ftk
