#include "ftk/matrix_market.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "ftk/error.hpp"

namespace ftk {

namespace {

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

CsrMatrix read_matrix_market(std::istream &in)
{
    std::string line;
    if (!std::getline(in, line)) throw ParseError("matrix market: empty input");

    std::istringstream header(line);
    std::string banner, object, format, field, symmetry;
    header >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%MatrixMarket") throw ParseError("matrix market: missing %%MatrixMarket banner");
    object = lower(object);
    format = lower(format);
    field = lower(field);
    symmetry = lower(symmetry);
    if (object != "matrix") throw ParseError("matrix market: unsupported object '" + object + "'");
    if (format != "coordinate")
        throw ParseError("matrix market: only coordinate format is supported");
    if (field != "real" && field != "integer" && field != "double")
        throw ParseError("matrix market: unsupported field '" + field + "'");
    if (symmetry != "general" && symmetry != "symmetric")
        throw ParseError("matrix market: unsupported symmetry '" + symmetry + "'");
    const bool symmetric = symmetry == "symmetric";

    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '%') continue;
        break;
    }
    long long nrows = -1, ncols = -1, nnz = -1;
    {
        std::istringstream size_line(line);
        if (!(size_line >> nrows >> ncols >> nnz) || nrows < 0 || ncols < 0 || nnz < 0)
            throw ParseError("matrix market: malformed size line");
    }
    if (symmetric && nrows != ncols) throw ParseError("matrix market: symmetric matrix not square");

    std::vector<Triplet> entries;
    entries.reserve(static_cast<std::size_t>(symmetric ? 2 * nnz : nnz));
    long long read = 0;
    while (read < nnz && std::getline(in, line)) {
        if (line.empty() || line[0] == '%') continue;
        std::istringstream entry(line);
        long long i, j;
        double v;
        if (!(entry >> i >> j >> v)) throw ParseError("matrix market: malformed entry line");
        if (i < 1 || i > nrows || j < 1 || j > ncols)
            throw ParseError("matrix market: index (" + std::to_string(i) + ", " +
                             std::to_string(j) + ") out of range");
        if (symmetric && j > i)
            throw ParseError("matrix market: symmetric file stores upper-triangular entry");
        entries.push_back({static_cast<int>(i - 1), static_cast<int>(j - 1), v});
        if (symmetric && i != j)
            entries.push_back({static_cast<int>(j - 1), static_cast<int>(i - 1), v});
        ++read;
    }
    if (read != nnz) throw ParseError("matrix market: fewer entries than declared");

    try {
        return CsrMatrix::from_triplets(static_cast<int>(nrows), static_cast<int>(ncols),
                                        std::move(entries), true);
    } catch (const InvalidArgument &e) {
        throw ParseError(std::string("matrix market: ") + e.what());
    }
}

CsrMatrix read_matrix_market(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return read_matrix_market(in);
}

void write_matrix_market(const CsrMatrix &a, std::ostream &out)
{
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << a.rows() << ' ' << a.cols() << ' ' << a.nnz() << '\n';
    out << std::setprecision(17);
    for (int i = 0; i < a.rows(); ++i) {
        const auto rc = a.row_cols(i);
        const auto rv = a.row_values(i);
        for (std::size_t k = 0; k < rc.size(); ++k)
            out << (i + 1) << ' ' << (rc[k] + 1) << ' ' << rv[k] << '\n';
    }
}

void write_matrix_market(const CsrMatrix &a, const std::filesystem::path &path)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_matrix_market(a, out);
}

Vector read_vector(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    Vector v;
    std::string tok;
    while (in >> tok) {
        try {
            std::size_t pos = 0;
            v.push_back(std::stod(tok, &pos));
            if (pos != tok.size()) throw ParseError("bad vector entry '" + tok + "'");
        } catch (const std::logic_error &) {
            throw ParseError("bad vector entry '" + tok + "'");
        }
    }
    return v;
}

void write_vector(std::span<const double> v, const std::filesystem::path &path)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << std::setprecision(17);
    for (double x : v) out << x << '\n';
}

} // namespace ftk
