#include "ftk/error.hpp"

namespace ftk {

void require(bool cond, const std::string &what)
{
    if (!cond) throw InvalidArgument(what);
}

void require_dims(bool cond, const std::string &what)
{
    if (!cond) throw DimensionMismatch(what);
}

} // namespace ftk
