#pragma once

#include <filesystem>
#include <iosfwd>

#include "ftk/sparse.hpp"

namespace ftk {

/// Reads a coordinate-format Matrix Market file (real or integer field,
/// general or symmetric). Symmetric files are expanded to general storage.
/// Duplicate entries, bad headers and out-of-range indices raise ParseError.
CsrMatrix read_matrix_market(std::istream &in);
CsrMatrix read_matrix_market(const std::filesystem::path &path);

/// Writes coordinate/real/general with 17 significant digits.
void write_matrix_market(const CsrMatrix &a, std::ostream &out);
void write_matrix_market(const CsrMatrix &a, const std::filesystem::path &path);

/// Plain text vectors: one value per line (any whitespace accepted on read).
Vector read_vector(const std::filesystem::path &path);
void write_vector(std::span<const double> v, const std::filesystem::path &path);

} // namespace ftk
