#pragma once

#include <span>
#include <string>
#include <vector>

#include "ftk/error.hpp"
#include "ftk/sparse.hpp"

namespace ftk::resilience {

enum class Strategy { global_rollback, local_restore, local_auxiliary };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string &name);

/// How the communicator is rebuilt after a failure. Shrinking keeps the
/// survivors only, which cannot recover the data of a lost rank.
enum class Reconstitute { respawn, shrink };

std::string to_string(Reconstitute r);
Reconstitute parse_reconstitute(const std::string &name);

struct RecoveryPolicy {
    Strategy strategy = Strategy::local_restore;
    int backup_frequency = 1; ///< backup after every f-th iteration
    double aux_tol = 1e-10;   ///< relative to the zero-guess residual of the subproblem
    int aux_maxit = 10000;
    Reconstitute reconstitute = Reconstitute::respawn;

    void validate() const;
};

/// The lost data cannot be rebuilt.
class RecoveryFailed : public Error {
public:
    using Error::Error;
};

struct AuxResult {
    Vector x;
    int iterations = 0;
    bool converged = false;
};

/// Solves the local Dirichlet problem A_FF x = rhs by Jacobi-preconditioned
/// CG starting from `guess`. Converged when ‖rhs − A_FF x‖ ≤ tol·‖rhs‖, so
/// different guesses are judged against the same target.
AuxResult solve_auxiliary(const CsrMatrix &a_ff, std::span<const double> rhs, Vector guess, double tol,
                          int maxit);

/// Ranks that should hold the backup of `rank`, in order of preference:
/// the members following it circularly.
std::vector<int> backup_targets(int rank, const std::vector<int> &members);

} // namespace ftk::resilience
