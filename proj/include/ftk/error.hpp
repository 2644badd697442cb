#pragma once

#include <stdexcept>
#include <string>

namespace ftk {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidPartition : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Malformed input files (Matrix Market, vectors).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown: zero pivots, indefinite curvature, singular Gram blocks.
class Breakdown : public Error {
public:
    using Error::Error;
};

/// A recurrence produced a non-finite value.
class Divergence : public Error {
public:
    using Error::Error;
};

void require(bool cond, const std::string &what);
void require_dims(bool cond, const std::string &what);

} // namespace ftk
