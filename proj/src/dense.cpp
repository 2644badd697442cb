#include "ftk/dense.hpp"

#include <algorithm>
#include <cmath>

#include "ftk/error.hpp"

namespace ftk {

LeastSquaresResult least_squares_qr(DenseMatrix a, std::vector<double> b, double rank_tol)
{
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    require(m >= n, "least_squares_qr: system must not be underdetermined");
    require_dims(b.size() == m, "least_squares_qr: rhs length mismatch");

    std::vector<double> v(m);
    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < m; ++i) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        const double alpha = a(k, k) > 0 ? -norm : norm;
        for (std::size_t i = k; i < m; ++i) v[i] = a(i, k);
        v[k] -= alpha;
        double vnorm2 = 0.0;
        for (std::size_t i = k; i < m; ++i) vnorm2 += v[i] * v[i];
        if (vnorm2 == 0.0) continue;

        // Apply H = I - 2 v vᵀ / (vᵀv) to the trailing columns and to b.
        for (std::size_t j = k; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = k; i < m; ++i) s += v[i] * a(i, j);
            s = 2.0 * s / vnorm2;
            for (std::size_t i = k; i < m; ++i) a(i, j) -= s * v[i];
        }
        double s = 0.0;
        for (std::size_t i = k; i < m; ++i) s += v[i] * b[i];
        s = 2.0 * s / vnorm2;
        for (std::size_t i = k; i < m; ++i) b[i] -= s * v[i];
    }

    double rmax = 0.0, rmin = n ? std::abs(a(0, 0)) : 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        rmax = std::max(rmax, std::abs(a(k, k)));
        rmin = std::min(rmin, std::abs(a(k, k)));
    }
    if (n > 0 && (rmax == 0.0 || rmin <= rank_tol * rmax))
        throw Breakdown("least_squares_qr: rank-deficient subproblem");

    LeastSquaresResult res;
    res.x.assign(n, 0.0);
    for (std::size_t kk = n; kk-- > 0;) {
        double s = b[kk];
        for (std::size_t j = kk + 1; j < n; ++j) s -= a(kk, j) * res.x[j];
        res.x[kk] = s / a(kk, kk);
    }
    res.rcond = n ? rmin / rmax : 1.0;
    return res;
}

SymmetricEigen symmetric_eigen(const DenseMatrix &input)
{
    const std::size_t n = input.rows();
    require(n == input.cols(), "symmetric_eigen: matrix not square");
    DenseMatrix a = input;
    DenseMatrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a(i, j) * a(i, j);
                if (i != j) off += a(i, j) * a(i, j);
            }
        if (off <= 1e-30 * total || off == 0.0) break;

        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }

    SymmetricEigen out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
    out.vectors = std::move(v);
    return out;
}

PseudoInverse symmetric_pinv(const DenseMatrix &a, double rel_tol)
{
    const std::size_t n = a.rows();
    const auto eig = symmetric_eigen(a);
    double lmax = 0.0;
    for (double l : eig.values) lmax = std::max(lmax, std::abs(l));

    PseudoInverse out{DenseMatrix(n, n), 0};
    for (std::size_t k = 0; k < n; ++k) {
        const double l = eig.values[k];
        if (lmax == 0.0 || std::abs(l) <= rel_tol * lmax) continue;
        ++out.rank;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.matrix(i, j) += eig.vectors(i, k) * eig.vectors(j, k) / l;
    }
    return out;
}

DenseMatrix multiply(const DenseMatrix &a, const DenseMatrix &b)
{
    require_dims(a.cols() == b.rows(), "multiply: inner dimension mismatch");
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

} // namespace ftk
