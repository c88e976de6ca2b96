#pragma once

// Single-file containers for attention dumps (.attnpack) and fingerprint
// packs (.fpk).
//
// Byte layout (all integers little-endian):
//   "ATNP" | u32 version | u64 manifest_len | manifest (UTF-8 JSON) | payload
// The payload is a contiguous run of IEEE-754 binary32 values with no
// padding. An attention tensor of shape L x H x N x N is stored row-major,
// element (l, h, i, j) at offset + ((l*H + h)*N + i)*N + j.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "attndiff/error.hpp"

namespace attndiff {

inline constexpr std::string_view kPackMagic = "ATNP";
inline constexpr std::uint32_t kPackFormatVersion = 1;

enum class PackKind { attention, fingerprint };

std::string_view to_string(PackKind kind);

struct ProbeTensorRef {
  std::string probe_id;
  std::string domain;
  // Token lengths N and Ñ and element offsets into the payload. Unused
  // (zero) in fingerprint packs.
  std::uint64_t origin_tokens = 0;
  std::uint64_t corrupted_tokens = 0;
  std::uint64_t origin_offset = 0;
  std::uint64_t corrupted_offset = 0;
};

struct PackManifest {
  PackKind kind = PackKind::attention;
  std::uint32_t format_version = kPackFormatVersion;
  std::string model_id;
  std::int64_t created_unix = 0;
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  // Fingerprint packs only: spectral rank K. Width D = layers*heads*rank.
  std::uint32_t rank = 0;
  std::vector<ProbeTensorRef> probes;
  std::map<std::string, std::string> extra;

  std::uint64_t fingerprint_width() const {
    return std::uint64_t{layers} * heads * rank;
  }
  // Number of payload elements the manifest declares.
  std::uint64_t declared_elements() const;
};

struct Pack {
  PackManifest manifest;
  std::vector<float> payload;
};

enum class Which { origin, corrupted };

// Read-only row-major view over one L x H x N x N (or N x N) tensor slice.
using TensorView =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

/// Attention matrix (l, h) of probe `probe` as an N x N view into the
/// payload. No bounds checks beyond debug asserts; validate first.
TensorView attention_view(const Pack& pack, std::size_t probe, Which which,
                          std::uint32_t layer, std::uint32_t head);

/// Lays out probe tensors contiguously in manifest order and returns the
/// total element count. Overwrites every offset in `manifest.probes`.
std::uint64_t assign_contiguous_offsets(PackManifest& manifest);

/// Structural checks only (no payload values): kind-specific fields,
/// canonical probe order, offsets in range, no overlap, exact tiling.
std::vector<Diagnostic> validate_structure(const PackManifest& manifest,
                                           std::uint64_t payload_elements);

/// Full check: structure plus value sanity. For attention packs every row
/// over the causal lower triangle must sum to at most 1 + 1e-3 and the
/// strict upper triangle must be at most 1e-6 in magnitude. Fingerprint
/// payloads must be finite and non-negative. Never throws.
std::vector<Diagnostic> validate_pack(const PackManifest& manifest,
                                      std::span<const float> payload);
inline std::vector<Diagnostic> validate_pack(const Pack& pack) {
  return validate_pack(pack.manifest, pack.payload);
}

std::string manifest_to_json(const PackManifest& manifest);
PackManifest manifest_from_json(std::string_view text);

/// Serialize. Throws FormatError when structural invariants fail and
/// ValueError on a non-finite payload value.
std::vector<std::uint8_t> write_pack(const PackManifest& manifest,
                                     std::span<const float> payload);

/// Parse and structurally validate. Throws FormatError whose code() is one
/// of "bad magic", "truncated header", "unsupported version",
/// "manifest schema", "truncated payload", "size mismatch",
/// "unsorted probe ids", or another structural diagnostic code.
Pack read_pack(std::span<const std::uint8_t> bytes);

void save_pack(const std::filesystem::path& path, const PackManifest& manifest,
               std::span<const float> payload);
Pack load_pack(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace attndiff
