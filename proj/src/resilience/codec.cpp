#include "ftk/resilience/codec.hpp"

#include <cmath>
#include <cstring>

#include "ftk/error.hpp"
#include "ftk/hierarchy.hpp"

namespace ftk::resilience {

std::string to_string(CodecKind k)
{
    switch (k) {
    case CodecKind::zero: return "zero";
    case CodecKind::hierarchical: return "hierarchical";
    case CodecKind::accuracy_bounded: return "accuracy_bounded";
    case CodecKind::adaptive: return "adaptive";
    }
    return "?";
}

CodecKind parse_codec_kind(const std::string &name)
{
    for (auto k : {CodecKind::zero, CodecKind::hierarchical, CodecKind::accuracy_bounded, CodecKind::adaptive})
        if (to_string(k) == name) return k;
    throw InvalidArgument("unknown codec '" + name + "'");
}

void Codec::validate() const
{
    switch (kind) {
    case CodecKind::zero: break;
    case CodecKind::hierarchical: require(level >= 1, "codec: hierarchical level must be >= 1"); break;
    case CodecKind::accuracy_bounded:
        require(std::isfinite(tau) && tau > 0.0, "codec: tau must be positive and finite");
        break;
    case CodecKind::adaptive:
        require(std::isfinite(coupling) && coupling > 0.0, "codec: coupling must be positive and finite");
        break;
    }
}

std::string Codec::describe() const
{
    switch (kind) {
    case CodecKind::zero: return "zero";
    case CodecKind::hierarchical: return "hierarchical(" + std::to_string(level) + ")";
    case CodecKind::accuracy_bounded: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "accuracy_bounded(%g)", tau);
        return buf;
    }
    case CodecKind::adaptive: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "adaptive(%g)", coupling);
        return buf;
    }
    }
    return "?";
}

double BackupSnapshot::compression_rate() const
{
    if (length == 0 || payload.empty()) return 1.0;
    return static_cast<double>(uncompressed_len()) / static_cast<double>(payload_len());
}

namespace {

template <class T>
void put(sim::Bytes &out, T v)
{
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get(const sim::Bytes &in, std::size_t &pos)
{
    if (pos + sizeof(T) > in.size()) throw ParseError("backup snapshot: truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

void put_raw(sim::Bytes &out, std::span<const double> x)
{
    for (double v : x) put(out, v);
}

void put_varint(sim::Bytes &out, std::uint64_t v)
{
    while (v >= 0x80) {
        out.push_back(static_cast<std::uint8_t>(v | 0x80));
        v >>= 7;
    }
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint64_t get_varint(const sim::Bytes &in, std::size_t &pos)
{
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
        if (pos >= in.size()) throw ParseError("backup snapshot: truncated varint");
        const std::uint8_t b = in[pos++];
        v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
        if (!(b & 0x80)) return v;
    }
    throw ParseError("backup snapshot: varint too long");
}

std::uint64_t zigzag(std::int64_t v) { return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63); }
std::int64_t unzigzag(std::uint64_t v) { return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1); }

// Predictive quantization: each entry is predicted by the previous decoded
// value and the correction is rounded to a grid of cell 2τ. Token 0 escapes
// to 8 raw bytes; otherwise the token is zigzag(q) + 1.
sim::Bytes quantize(std::span<const double> x, double tau)
{
    sim::Bytes out;
    const double cell = 2.0 * tau;
    double pred = 0.0;
    for (double v : x) {
        const double qd = std::nearbyint((v - pred) / cell);
        bool ok = std::isfinite(qd) && std::fabs(qd) < 0x1p52;
        double d = 0.0;
        if (ok) {
            d = pred + qd * cell;
            ok = std::fabs(v - d) <= tau;
        }
        if (ok) {
            put_varint(out, zigzag(static_cast<std::int64_t>(qd)) + 1);
            pred = d;
        } else {
            out.push_back(0);
            put(out, v);
            pred = v;
        }
    }
    return out;
}

Vector dequantize(const sim::Bytes &in, std::size_t n, double tau)
{
    Vector x(n);
    const double cell = 2.0 * tau;
    double pred = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t t = get_varint(in, pos);
        if (t == 0) {
            pred = get<double>(in, pos);
        } else {
            pred = pred + static_cast<double>(unzigzag(t - 1)) * cell;
        }
        x[i] = pred;
    }
    if (pos != in.size()) throw ParseError("backup snapshot: trailing bytes");
    return x;
}

Vector read_raw(const sim::Bytes &in, std::size_t n)
{
    Vector x(n);
    std::size_t pos = 0;
    for (auto &v : x) v = get<double>(in, pos);
    return x;
}

int usable_levels(StructuredGrid g, int wanted)
{
    int l = 0;
    while (l < wanted && g.nx / 2 >= 2 && g.ny / 2 >= 2) {
        g = {g.nx / 2, g.ny / 2, 2.0 * g.h};
        ++l;
    }
    return l;
}

} // namespace

BackupSnapshot encode(const Codec &codec, std::span<const double> x, double residual_norm,
                      const std::optional<StructuredGrid> &layout)
{
    codec.validate();
    for (double v : x)
        if (!std::isfinite(v)) throw InvalidArgument("encode: non-finite entry");
    BackupSnapshot s;
    s.kind = codec.kind;
    s.length = x.size();
    switch (codec.kind) {
    case CodecKind::zero:
        if (!x.empty()) put<std::uint64_t>(s.payload, x.size());
        break;
    case CodecKind::hierarchical: {
        require(layout.has_value(), "encode: hierarchical codec needs the segment layout");
        require_dims(static_cast<std::size_t>(layout->size()) == x.size(),
                     "encode: layout does not match the vector length");
        s.nx = layout->nx;
        s.ny = layout->ny;
        s.level = usable_levels(*layout, codec.level);
        if (s.level == 0) {
            put_raw(s.payload, x);
        } else {
            const Hierarchy h(*layout, s.level + 1);
            put_raw(s.payload, h.restrict_to(x, s.level));
        }
        break;
    }
    case CodecKind::accuracy_bounded:
    case CodecKind::adaptive: {
        if (codec.kind == CodecKind::adaptive) {
            if (!(std::isfinite(residual_norm) && residual_norm > 0.0))
                throw InvalidArgument("encode: adaptive codec needs a positive residual norm");
            s.tau = codec.coupling * residual_norm;
        } else {
            s.tau = codec.tau;
        }
        s.payload = quantize(x, s.tau);
        // Incompressible data is stored verbatim; the decoder tells the two
        // apart by length, so the quantized stream must be strictly shorter.
        if (s.payload.size() >= 8 * x.size()) {
            s.payload.clear();
            put_raw(s.payload, x);
        }
        break;
    }
    }
    return s;
}

Vector decode(const BackupSnapshot &s)
{
    const std::size_t n = s.length;
    switch (s.kind) {
    case CodecKind::zero: return Vector(n, 0.0);
    case CodecKind::hierarchical: {
        if (s.level == 0) return read_raw(s.payload, n);
        const StructuredGrid g{s.nx, s.ny, 1.0};
        require_dims(static_cast<std::size_t>(g.size()) == n, "decode: layout does not match length");
        const Hierarchy h(g, s.level + 1);
        const auto coarse_n = static_cast<std::size_t>(h.level(s.level).grid.size());
        if (s.payload.size() != 8 * coarse_n) throw ParseError("decode: hierarchical payload has wrong size");
        return h.prolongate_from(read_raw(s.payload, coarse_n), s.level);
    }
    case CodecKind::accuracy_bounded:
    case CodecKind::adaptive:
        if (s.payload.size() == 8 * n) return read_raw(s.payload, n);
        return dequantize(s.payload, n, s.tau);
    }
    throw ParseError("decode: unknown codec");
}

sim::Bytes BackupSnapshot::serialize() const
{
    sim::Bytes out;
    put<std::int32_t>(out, source);
    put<std::int32_t>(out, iteration);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
    put(out, tau);
    put<std::int32_t>(out, level);
    put<std::int32_t>(out, nx);
    put<std::int32_t>(out, ny);
    put<std::uint64_t>(out, length);
    put<std::uint64_t>(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

BackupSnapshot BackupSnapshot::deserialize(const sim::Bytes &in)
{
    BackupSnapshot s;
    std::size_t pos = 0;
    s.source = get<std::int32_t>(in, pos);
    s.iteration = get<std::int32_t>(in, pos);
    const auto k = get<std::uint8_t>(in, pos);
    if (k > static_cast<std::uint8_t>(CodecKind::adaptive)) throw ParseError("backup snapshot: bad codec");
    s.kind = static_cast<CodecKind>(k);
    s.tau = get<double>(in, pos);
    s.level = get<std::int32_t>(in, pos);
    s.nx = get<std::int32_t>(in, pos);
    s.ny = get<std::int32_t>(in, pos);
    s.length = get<std::uint64_t>(in, pos);
    const auto len = get<std::uint64_t>(in, pos);
    if (len != in.size() - pos) throw ParseError("backup snapshot: payload length mismatch");
    s.payload.assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.end());
    return s;
}

} // namespace ftk::resilience
