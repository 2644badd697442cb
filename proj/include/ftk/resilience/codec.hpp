#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "ftk/grid.hpp"
#include "ftk/sim/world.hpp"

namespace ftk::resilience {

enum class CodecKind { zero, hierarchical, accuracy_bounded, adaptive };

std::string to_string(CodecKind k);
CodecKind parse_codec_kind(const std::string &name);

/// Lossy compressor for backup payloads.
struct Codec {
    CodecKind kind = CodecKind::zero;
    int level = 1;         ///< hierarchical: coarsening steps
    double tau = 1e-6;     ///< accuracy_bounded: ∞-norm error bound
    double coupling = 1.0; ///< adaptive: τ = coupling · ‖r‖

    static Codec zero() { return {}; }
    static Codec hierarchical(int level) { return {CodecKind::hierarchical, level, 0.0, 1.0}; }
    static Codec accuracy_bounded(double tau) { return {CodecKind::accuracy_bounded, 1, tau, 1.0}; }
    static Codec adaptive(double coupling = 1.0) { return {CodecKind::adaptive, 1, 0.0, coupling}; }

    void validate() const;
    std::string describe() const;
};

struct BackupSnapshot {
    int source = -1;
    int iteration = 0;
    CodecKind kind = CodecKind::zero;
    double tau = 0.0; ///< bound actually used (0 for zero/hierarchical)
    int level = 0;    ///< hierarchical: levels actually applied
    int nx = 0, ny = 0;
    std::uint64_t length = 0; ///< number of entries
    sim::Bytes payload;

    /// Bytes of the plain double representation.
    std::uint64_t uncompressed_len() const { return 8 * length; }
    std::uint64_t payload_len() const { return payload.size(); }
    /// uncompressed_len / payload_len; 1 for an empty vector.
    double compression_rate() const;

    /// Wire form used for remote placement.
    sim::Bytes serialize() const;
    static BackupSnapshot deserialize(const sim::Bytes &bytes);
};

/// `residual_norm` feeds the adaptive codec; `layout` is the structured grid
/// the segment lives on (required by the hierarchical codec, which coarsens
/// as far as the layout allows up to `codec.level`).
BackupSnapshot encode(const Codec &codec, std::span<const double> x, double residual_norm = 0.0,
                      const std::optional<StructuredGrid> &layout = {});
Vector decode(const BackupSnapshot &snapshot);

} // namespace ftk::resilience
