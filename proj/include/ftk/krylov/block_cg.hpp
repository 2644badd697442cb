#pragma once

#include <vector>

#include "ftk/krylov/cg.hpp"
#include "ftk/sparse.hpp"

namespace ftk::krylov {

struct BlockConfig {
    GramMode mode = GramMode::diagonal;
    std::size_t block_size = 1; ///< for GramMode::block_diagonal
    /// Eigenvalues below rel_pinv·max|λ| of a Gram block are treated as zero.
    double rel_pinv = 1e-10;
};

struct BlockResult {
    MultiVector x;
    std::vector<ConvergenceRecord> columns;
    int iterations = 0;
    bool converged = false;
    std::uint64_t reductions = 0;
};

/// Block preconditioned CG for A X = B.
///
/// The step and conjugation coefficients are k×k matrices computed from
/// Gram matrices restricted to `cfg.mode`; each diagonal block is inverted
/// with a pseudo-inverse so linearly dependent right-hand sides are fine.
/// Columns meeting the tolerance are frozen and leave the active set.
/// Two reductions per iteration. Throws Breakdown naming a Gram block that
/// is numerically zero.
BlockResult block_solve(const CsrMatrix &a, const MultiVector &b, const Preconditioner &m,
                        const SolverConfig &solver, const BlockConfig &cfg, ReductionChannel &channel);
BlockResult block_solve(const CsrMatrix &a, const MultiVector &b, const Preconditioner &m,
                        const SolverConfig &solver, const BlockConfig &cfg);

} // namespace ftk::krylov
