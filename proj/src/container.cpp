#include "attndiff/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace attndiff {

namespace {

constexpr std::uint64_t kMaxTokens = std::uint64_t{1} << 20;
constexpr std::uint64_t kMaxLayersHeads = std::uint64_t{1} << 16;
constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

template <typename UInt>
void put_le(std::vector<std::uint8_t>& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename UInt>
UInt get_le(const std::uint8_t* p) {
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(p[i]) << (8 * i);
  }
  return value;
}

std::uint64_t tensor_elements(const PackManifest& m, std::uint64_t tokens) {
  return std::uint64_t{m.layers} * m.heads * tokens * tokens;
}

std::string probe_context(const ProbeTensorRef& ref, Which which) {
  return "probe " + ref.probe_id +
         (which == Which::origin ? " origin" : " corrupted");
}

struct Interval {
  std::uint64_t begin;
  std::uint64_t end;
  std::string label;
};

void check_probe_ids(const PackManifest& m, std::vector<Diagnostic>& out) {
  for (std::size_t i = 0; i < m.probes.size(); ++i) {
    if (m.probes[i].probe_id.empty()) {
      out.push_back({"manifest schema", "probe " + std::to_string(i) +
                                            " has an empty probe_id"});
    }
    if (i == 0) continue;
    const auto& prev = m.probes[i - 1].probe_id;
    const auto& cur = m.probes[i].probe_id;
    if (prev == cur) {
      out.push_back({"duplicate probe id", cur});
    } else if (cur < prev) {
      out.push_back({"unsorted probe ids", "'" + cur + "' follows '" + prev + "'"});
    }
  }
}

void check_attention_layout(const PackManifest& m,
                            std::uint64_t payload_elements,
                            std::vector<Diagnostic>& out) {
  std::vector<Interval> intervals;
  std::uint64_t total = 0;
  bool dims_ok = true;
  for (const auto& ref : m.probes) {
    for (Which which : {Which::origin, Which::corrupted}) {
      const std::uint64_t tokens =
          which == Which::origin ? ref.origin_tokens : ref.corrupted_tokens;
      const std::uint64_t offset =
          which == Which::origin ? ref.origin_offset : ref.corrupted_offset;
      if (tokens == 0) {
        out.push_back({"missing tensor ref", probe_context(ref, which)});
        dims_ok = false;
        continue;
      }
      if (tokens > kMaxTokens) {
        out.push_back({"invalid dimensions",
                       probe_context(ref, which) + " has " +
                           std::to_string(tokens) + " tokens"});
        dims_ok = false;
        continue;
      }
      const std::uint64_t size = tensor_elements(m, tokens);
      total += size;
      if (offset > payload_elements || size > payload_elements - offset) {
        out.push_back({"offset out of range",
                       probe_context(ref, which) + " spans [" +
                           std::to_string(offset) + ", " +
                           std::to_string(offset + size) + ") of " +
                           std::to_string(payload_elements)});
        continue;
      }
      intervals.push_back({offset, offset + size, probe_context(ref, which)});
    }
  }
  std::sort(intervals.begin(), intervals.end(),
            [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < intervals.size(); ++i) {
    if (intervals[i].begin < intervals[i - 1].end) {
      out.push_back({"tensor overlap",
                     intervals[i - 1].label + " and " + intervals[i].label});
    }
  }
  if (dims_ok && total != payload_elements) {
    out.push_back({"size mismatch", "manifest declares " + std::to_string(total) +
                                        " elements, payload has " +
                                        std::to_string(payload_elements)});
  }
}

void check_fingerprint_layout(const PackManifest& m,
                              std::uint64_t payload_elements,
                              std::vector<Diagnostic>& out) {
  if (m.rank == 0) {
    out.push_back({"invalid dimensions", "rank must be at least 1"});
    return;
  }
  const std::uint64_t declared = m.probes.size() * m.fingerprint_width();
  if (declared != payload_elements) {
    out.push_back({"size mismatch", "manifest declares " +
                                        std::to_string(declared) +
                                        " elements, payload has " +
                                        std::to_string(payload_elements)});
  }
}

constexpr double kRowSumSlack = 1e-3;
constexpr double kUpperTolerance = 1e-6;

void check_attention_values(const PackManifest& m, std::span<const float> payload,
                            std::vector<Diagnostic>& out) {
  for (std::size_t p = 0; p < m.probes.size(); ++p) {
    const auto& ref = m.probes[p];
    for (Which which : {Which::origin, Which::corrupted}) {
      const std::uint64_t n =
          which == Which::origin ? ref.origin_tokens : ref.corrupted_tokens;
      const std::uint64_t base =
          which == Which::origin ? ref.origin_offset : ref.corrupted_offset;
      for (std::uint32_t l = 0; l < m.layers; ++l) {
        for (std::uint32_t h = 0; h < m.heads; ++h) {
          const float* a = payload.data() + base + (std::uint64_t{l} * m.heads + h) * n * n;
          bool seen_nonfinite = false, seen_negative = false, seen_upper = false,
               seen_rowsum = false;
          auto where = [&](std::uint64_t i, std::uint64_t j) {
            return probe_context(ref, which) + " l=" + std::to_string(l) +
                   " h=" + std::to_string(h) + " (" + std::to_string(i) + "," +
                   std::to_string(j) + ")";
          };
          for (std::uint64_t i = 0; i < n; ++i) {
            double row_sum = 0.0;
            for (std::uint64_t j = 0; j < n; ++j) {
              const double v = a[i * n + j];
              if (!std::isfinite(v)) {
                if (!seen_nonfinite) out.push_back({"non-finite value", where(i, j)});
                seen_nonfinite = true;
                continue;
              }
              if (j > i) {
                if (std::abs(v) > kUpperTolerance && !seen_upper) {
                  out.push_back({"non-causal mass",
                                 where(i, j) + " = " + std::to_string(v)});
                  seen_upper = true;
                }
                continue;
              }
              if (v < -kUpperTolerance && !seen_negative) {
                out.push_back({"negative probability",
                               where(i, j) + " = " + std::to_string(v)});
                seen_negative = true;
              }
              row_sum += v;
            }
            if (row_sum > 1.0 + kRowSumSlack && !seen_rowsum) {
              out.push_back({"row sum exceeds 1",
                             where(i, 0) + " row sum " + std::to_string(row_sum)});
              seen_rowsum = true;
            }
          }
        }
      }
    }
  }
}

void check_fingerprint_values(const PackManifest& m, std::span<const float> payload,
                              std::vector<Diagnostic>& out) {
  const std::uint64_t width = m.fingerprint_width();
  for (std::size_t idx = 0; idx < payload.size(); ++idx) {
    const float v = payload[idx];
    if (std::isfinite(v) && v >= 0.0f) continue;
    const std::string where = "probe " + m.probes[idx / width].probe_id +
                              " column " + std::to_string(idx % width);
    out.push_back({std::isfinite(v) ? "negative value" : "non-finite value", where});
  }
}

std::string join_diagnostics(const std::vector<Diagnostic>& diags) {
  std::string out;
  for (const auto& d : diags) {
    if (!out.empty()) out += "; ";
    out += d.to_string();
  }
  return out;
}

}  // namespace

bool has_code(const std::vector<Diagnostic>& diags, const std::string& code) {
  return std::any_of(diags.begin(), diags.end(),
                     [&](const Diagnostic& d) { return d.code == code; });
}

std::string_view to_string(PackKind kind) {
  return kind == PackKind::attention ? "attention" : "fingerprint";
}

std::uint64_t PackManifest::declared_elements() const {
  if (kind == PackKind::fingerprint) return probes.size() * fingerprint_width();
  std::uint64_t total = 0;
  for (const auto& ref : probes) {
    total += tensor_elements(*this, std::min(ref.origin_tokens, kMaxTokens));
    total += tensor_elements(*this, std::min(ref.corrupted_tokens, kMaxTokens));
  }
  return total;
}

TensorView attention_view(const Pack& pack, std::size_t probe, Which which,
                          std::uint32_t layer, std::uint32_t head) {
  const auto& m = pack.manifest;
  const auto& ref = m.probes[probe];
  const std::uint64_t n =
      which == Which::origin ? ref.origin_tokens : ref.corrupted_tokens;
  const std::uint64_t base =
      which == Which::origin ? ref.origin_offset : ref.corrupted_offset;
  const std::uint64_t offset = base + (std::uint64_t{layer} * m.heads + head) * n * n;
  return TensorView(pack.payload.data() + offset, static_cast<Eigen::Index>(n),
                    static_cast<Eigen::Index>(n));
}

std::uint64_t assign_contiguous_offsets(PackManifest& manifest) {
  std::uint64_t cursor = 0;
  for (auto& ref : manifest.probes) {
    ref.origin_offset = cursor;
    cursor += tensor_elements(manifest, ref.origin_tokens);
    ref.corrupted_offset = cursor;
    cursor += tensor_elements(manifest, ref.corrupted_tokens);
  }
  return cursor;
}

std::vector<Diagnostic> validate_structure(const PackManifest& m,
                                           std::uint64_t payload_elements) {
  std::vector<Diagnostic> out;
  if (m.format_version != kPackFormatVersion) {
    out.push_back({"unsupported version", std::to_string(m.format_version)});
  }
  if (m.probes.empty()) {
    out.push_back({"probes non-empty", "pack declares no probes"});
  }
  if (m.layers == 0 || m.heads == 0 || m.layers > kMaxLayersHeads ||
      m.heads > kMaxLayersHeads) {
    out.push_back({"invalid dimensions", "layers=" + std::to_string(m.layers) +
                                             " heads=" + std::to_string(m.heads)});
    return out;
  }
  check_probe_ids(m, out);
  if (m.kind == PackKind::attention) {
    check_attention_layout(m, payload_elements, out);
  } else {
    check_fingerprint_layout(m, payload_elements, out);
  }
  return out;
}

std::vector<Diagnostic> validate_pack(const PackManifest& manifest,
                                      std::span<const float> payload) {
  auto out = validate_structure(manifest, payload.size());
  if (!out.empty()) return out;
  if (manifest.kind == PackKind::attention) {
    check_attention_values(manifest, payload, out);
  } else {
    check_fingerprint_values(manifest, payload, out);
  }
  return out;
}

std::string manifest_to_json(const PackManifest& m) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(m.kind);
  j["format_version"] = m.format_version;
  j["model_id"] = m.model_id;
  j["created_unix"] = m.created_unix;
  j["layers"] = m.layers;
  j["heads"] = m.heads;
  if (m.kind == PackKind::fingerprint) {
    j["rank"] = m.rank;
    j["rows"] = m.probes.size();
    j["width"] = m.fingerprint_width();
  }
  auto probes = nlohmann::ordered_json::array();
  for (const auto& ref : m.probes) {
    nlohmann::ordered_json p;
    p["probe_id"] = ref.probe_id;
    p["domain"] = ref.domain;
    if (m.kind == PackKind::attention) {
      p["origin_tokens"] = ref.origin_tokens;
      p["corrupted_tokens"] = ref.corrupted_tokens;
      p["origin_offset"] = ref.origin_offset;
      p["corrupted_offset"] = ref.corrupted_offset;
    }
    probes.push_back(std::move(p));
  }
  j["probes"] = std::move(probes);
  auto extra = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.extra) extra[k] = v;
  j["extra"] = std::move(extra);
  return j.dump();
}

PackManifest manifest_from_json(std::string_view text) {
  PackManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "attention") {
      m.kind = PackKind::attention;
    } else if (kind == "fingerprint") {
      m.kind = PackKind::fingerprint;
    } else {
      throw FormatError("manifest schema", "unknown kind '" + kind + "'");
    }
    m.format_version = j.at("format_version").get<std::uint32_t>();
    m.model_id = j.at("model_id").get<std::string>();
    m.created_unix = j.at("created_unix").get<std::int64_t>();
    m.layers = j.at("layers").get<std::uint32_t>();
    m.heads = j.at("heads").get<std::uint32_t>();
    if (m.kind == PackKind::fingerprint) m.rank = j.at("rank").get<std::uint32_t>();
    for (const auto& p : j.at("probes")) {
      ProbeTensorRef ref;
      ref.probe_id = p.at("probe_id").get<std::string>();
      ref.domain = p.at("domain").get<std::string>();
      if (m.kind == PackKind::attention) {
        ref.origin_tokens = p.at("origin_tokens").get<std::uint64_t>();
        ref.corrupted_tokens = p.at("corrupted_tokens").get<std::uint64_t>();
        ref.origin_offset = p.at("origin_offset").get<std::uint64_t>();
        ref.corrupted_offset = p.at("corrupted_offset").get<std::uint64_t>();
      }
      m.probes.push_back(std::move(ref));
    }
    if (m.kind == PackKind::fingerprint) {
      if (j.at("rows").get<std::uint64_t>() != m.probes.size() ||
          j.at("width").get<std::uint64_t>() != m.fingerprint_width()) {
        throw FormatError("size mismatch",
                          "rows/width disagree with probes and layers*heads*rank");
      }
    }
    if (j.contains("extra")) {
      for (const auto& [k, v] : j.at("extra").items()) m.extra[k] = v.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest schema", e.what());
  }
  return m;
}

std::vector<std::uint8_t> write_pack(const PackManifest& manifest,
                                     std::span<const float> payload) {
  const auto diags = validate_structure(manifest, payload.size());
  if (!diags.empty()) throw FormatError(diags.front().code, join_diagnostics(diags));
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i])) {
      throw ValueError("non-finite value", "payload element " + std::to_string(i));
    }
  }
  const std::string text = manifest_to_json(manifest);
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + text.size() + 4 * payload.size());
  out.insert(out.end(), kPackMagic.begin(), kPackMagic.end());
  put_le<std::uint32_t>(out, manifest.format_version);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (float v : payload) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Pack read_pack(std::span<const std::uint8_t> bytes) {
  const std::size_t magic_len = std::min(bytes.size(), kPackMagic.size());
  if (std::memcmp(bytes.data(), kPackMagic.data(), magic_len) != 0) {
    throw FormatError("bad magic", "stream does not start with ATNP");
  }
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("truncated header", std::to_string(bytes.size()) + " bytes");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kPackFormatVersion) {
    throw FormatError("unsupported version",
                      "stream version " + std::to_string(version) +
                          ", reader supports " + std::to_string(kPackFormatVersion));
  }
  const auto manifest_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (manifest_len > bytes.size() - kHeaderBytes) {
    throw FormatError("truncated header", "manifest length exceeds stream");
  }
  const std::string_view text(reinterpret_cast<const char*>(bytes.data() + kHeaderBytes),
                              manifest_len);
  Pack pack;
  pack.manifest = manifest_from_json(text);
  if (pack.manifest.format_version != version) {
    throw FormatError("unsupported version", "manifest format_version " +
                                                 std::to_string(pack.manifest.format_version) +
                                                 " differs from header");
  }

  const std::size_t payload_bytes = bytes.size() - kHeaderBytes - manifest_len;
  if (payload_bytes % 4 != 0) {
    throw FormatError("size mismatch", "payload is not a whole number of binary32 values");
  }
  const std::uint64_t elements = payload_bytes / 4;
  const std::uint64_t declared = pack.manifest.declared_elements();
  if (elements < declared) {
    throw FormatError("truncated payload", "expected " + std::to_string(declared) +
                                               " values, found " + std::to_string(elements));
  }
  if (elements > declared) {
    throw FormatError("size mismatch", "expected " + std::to_string(declared) +
                                           " values, found " + std::to_string(elements));
  }
  const auto diags = validate_structure(pack.manifest, elements);
  if (!diags.empty()) throw FormatError(diags.front().code, join_diagnostics(diags));

  pack.payload.resize(elements);
  const std::uint8_t* p = bytes.data() + kHeaderBytes + manifest_len;
  for (std::uint64_t i = 0; i < elements; ++i) {
    pack.payload[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
  }
  return pack;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("unreadable file", path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("unreadable file", path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("unwritable file", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("unwritable file", path.string());
}

void save_pack(const std::filesystem::path& path, const PackManifest& manifest,
               std::span<const float> payload) {
  write_file_bytes(path, write_pack(manifest, payload));
}

Pack load_pack(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return read_pack(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace attndiff
