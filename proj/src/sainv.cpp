#include "ftk/sainv.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ftk/error.hpp"

namespace ftk {

void SainvConfig::validate() const
{
    require(eps >= 0.0, "sainv: drop tolerance must be non-negative");
    require(omega > 1.0, "sainv: row cap factor omega must exceed 1");
}

int SainvConfig::row_cap(std::size_t nnz, int n) const
{
    if (std::isinf(omega) || n == 0) return std::numeric_limits<int>::max();
    const double avg = static_cast<double>(nnz) / n;
    return std::max(2, static_cast<int>(std::lround(omega * avg)));
}

namespace {

struct Entry {
    int index;
    double value;
};

/// One z-vector in row-wise storage, entries sorted by index.
class SparseRow {
public:
    explicit SparseRow(int diag) : diag_(diag) { entries_.push_back({diag, 1.0}); }

    const std::vector<Entry> &entries() const { return entries_; }
    int size() const { return static_cast<int>(entries_.size()); }

    Entry *find(int index)
    {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                                   [](const Entry &e, int i) { return e.index < i; });
        return it != entries_.end() && it->index == index ? &*it : nullptr;
    }

    void insert(int index, double value)
    {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                                   [](const Entry &e, int i) { return e.index < i; });
        entries_.insert(it, {index, value});
    }

    /// Smallest off-diagonal entry by magnitude; the unit diagonal is never evicted.
    const Entry *minimum() const
    {
        const Entry *best = nullptr;
        for (const auto &e : entries_)
            if (e.index != diag_ && (!best || std::abs(e.value) < std::abs(best->value))) best = &e;
        return best;
    }

    void erase(int index)
    {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                                   [](const Entry &e, int i) { return e.index < i; });
        entries_.erase(it);
    }

private:
    int diag_;
    std::vector<Entry> entries_;
};

void drop_holder(std::vector<int> &holders, int row)
{
    holders.erase(std::find(holders.begin(), holders.end(), row));
}

} // namespace

SainvFactors sainv(const CsrMatrix &a, const SainvConfig &cfg)
{
    cfg.validate();
    require_dims(a.rows() == a.cols(), "sainv: matrix not square");
    const int n = a.rows();
    const double drop = cfg.eps * a.max_abs();
    const int cap = cfg.row_cap(a.nnz(), n);

    std::vector<SparseRow> z;
    z.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) z.emplace_back(i);
    // holders[k]: rows j whose z_j stores index k.
    std::vector<std::vector<int>> holders(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) holders[i].push_back(i);

    Vector d(static_cast<std::size_t>(n), 0.0);
    Vector u(static_cast<std::size_t>(n), 0.0);
    std::vector<int> touched;
    std::vector<char> mark(static_cast<std::size_t>(n), 0);
    std::vector<char> is_candidate(static_cast<std::size_t>(n), 0);
    std::vector<int> candidates;

    for (int i = 0; i < n; ++i) {
        // u = A z_i
        touched.clear();
        for (const auto &e : z[i].entries()) {
            const auto rc = a.row_cols(e.index);
            const auto rv = a.row_values(e.index);
            // A symmetric: column e.index equals row e.index.
            for (std::size_t k = 0; k < rc.size(); ++k) {
                if (!mark[rc[k]]) {
                    mark[rc[k]] = 1;
                    touched.push_back(rc[k]);
                }
                u[rc[k]] += rv[k] * e.value;
            }
        }
        double dii = 0.0;
        for (const auto &e : z[i].entries()) dii += e.value * u[e.index];
        if (!(dii > 0.0))
            throw Breakdown("sainv: non-positive pivot " + std::to_string(dii) + " at step " +
                            std::to_string(i));
        d[i] = dii;

        candidates.clear();
        for (int k : touched) {
            mark[k] = 0;
            for (int j : holders[k])
                if (j > i && !is_candidate[j]) {
                    is_candidate[j] = 1;
                    candidates.push_back(j);
                }
        }
        for (int j : candidates) is_candidate[j] = 0;
        std::sort(candidates.begin(), candidates.end());

        const std::vector<Entry> zi = z[i].entries();
        for (int j : candidates) {
            double djj = 0.0;
            for (const auto &e : z[j].entries()) djj += e.value * u[e.index];
            if (djj == 0.0) continue;
            const double factor = -djj / dii;
            auto &row = z[j];
            for (const auto &e : zi) {
                const double alpha = factor * e.value;
                if (!(std::abs(alpha) > drop)) continue;
                if (Entry *existing = row.find(e.index)) {
                    existing->value += alpha;
                } else if (row.size() < cap) {
                    row.insert(e.index, alpha);
                    holders[e.index].push_back(j);
                } else if (const Entry *m = row.minimum();
                           m && std::abs(alpha) > std::abs(m->value)) {
                    const int old = m->index;
                    row.erase(old);
                    drop_holder(holders[old], j);
                    row.insert(e.index, alpha);
                    holders[e.index].push_back(j);
                }
            }
        }
        for (int k : touched) u[k] = 0.0;
    }

    std::vector<Triplet> entries;
    for (int i = 0; i < n; ++i)
        for (const auto &e : z[i].entries()) entries.push_back({e.index, i, e.value});
    return {CsrMatrix::from_triplets(n, n, std::move(entries)), std::move(d)};
}

Vector sainv_apply(const SainvFactors &f, std::span<const double> x)
{
    require_dims(x.size() == f.d.size(), "sainv_apply: length mismatch");
    Vector y(x.size());
    spmv_transpose(f.z, x, y);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= f.d[i];
    return spmv(f.z, y);
}

SainvPreconditioner::SainvPreconditioner(SainvFactors f)
    : factors_(std::move(f)), zt_(transpose(factors_.z))
{
}

void SainvPreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    require_dims(r.size() == size() && z.size() == size(), "sainv: length mismatch");
    Vector y = spmv(zt_, r);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= factors_.d[i];
    spmv(factors_.z, y, z);
}

} // namespace ftk
