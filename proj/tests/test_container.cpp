#include "attndiff/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

#include "doctest.h"

using namespace attndiff;

namespace {

PackManifest attention_manifest(std::uint32_t layers, std::uint32_t heads,
                                std::vector<std::pair<int, int>> lengths) {
  PackManifest m;
  m.kind = PackKind::attention;
  m.model_id = "unit";
  m.created_unix = 1700000000;
  m.layers = layers;
  m.heads = heads;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    ProbeTensorRef ref;
    ref.probe_id = "p" + std::to_string(100 + i);
    ref.domain = "Math";
    ref.origin_tokens = static_cast<std::uint64_t>(lengths[i].first);
    ref.corrupted_tokens = static_cast<std::uint64_t>(lengths[i].second);
    m.probes.push_back(ref);
  }
  assign_contiguous_offsets(m);
  return m;
}

// Causal maps with uniform rows: row i holds 1/(i+1) on its support.
std::vector<float> uniform_payload(const PackManifest& m) {
  std::vector<float> out(m.declared_elements(), 0.0f);
  for (const auto& ref : m.probes) {
    for (auto [base, n] : {std::pair{ref.origin_offset, ref.origin_tokens},
                           std::pair{ref.corrupted_offset, ref.corrupted_tokens}}) {
      for (std::uint64_t s = 0; s < std::uint64_t{m.layers} * m.heads; ++s) {
        for (std::uint64_t i = 0; i < n; ++i) {
          for (std::uint64_t j = 0; j <= i; ++j) {
            out[base + (s * n + i) * n + j] = 1.0f / static_cast<float>(i + 1);
          }
        }
      }
    }
  }
  return out;
}

std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | b[at + 1] << 8 | b[at + 2] << 16 | std::uint32_t{b[at + 3]} << 24;
}

std::string thrown_code(const std::vector<std::uint8_t>& bytes) {
  try {
    read_pack(bytes);
  } catch (const FormatError& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST_CASE("1-probe L=1 H=1 N=2 pack has the hand-counted size") {
  const auto m = attention_manifest(1, 1, {{2, 2}});
  const auto payload = uniform_payload(m);
  const auto bytes = write_pack(m, payload);
  const std::string manifest = manifest_to_json(m);
  CHECK(bytes.size() == 4 + 4 + 8 + manifest.size() + 8 * 4);
  CHECK(std::memcmp(bytes.data(), "ATNP", 4) == 0);
  CHECK(le32(bytes, 4) == 1);
  CHECK(le32(bytes, 8) == manifest.size());
  CHECK(le32(bytes, 12) == 0);
  // First payload value is A(0,0) = 1.0f, little-endian.
  CHECK(le32(bytes, 16 + manifest.size()) == std::bit_cast<std::uint32_t>(1.0f));
}

TEST_CASE("round trip is bit exact") {
  const auto m = attention_manifest(2, 3, {{3, 4}, {5, 5}, {2, 3}});
  auto payload = uniform_payload(m);
  payload[1] = -0.0f;                                   // upper cell, sign bit kept
  payload[7] = std::numeric_limits<float>::denorm_min();
  const auto bytes = write_pack(m, payload);
  const Pack back = read_pack(bytes);
  CHECK(manifest_to_json(back.manifest) == manifest_to_json(m));
  REQUIRE(back.payload.size() == payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    CHECK(std::bit_cast<std::uint32_t>(back.payload[i]) ==
          std::bit_cast<std::uint32_t>(payload[i]));
  }
  CHECK(write_pack(back.manifest, back.payload) == bytes);
}

TEST_CASE("element layout follows ((l*H + h)*N + i)*N + j") {
  const auto m = attention_manifest(2, 3, {{4, 3}});
  std::vector<float> payload(m.declared_elements());
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(i);
  Pack pack{m, payload};
  const auto& ref = m.probes[0];
  for (std::uint32_t l = 0; l < 2; ++l) {
    for (std::uint32_t h = 0; h < 3; ++h) {
      const auto o = attention_view(pack, 0, Which::origin, l, h);
      const auto c = attention_view(pack, 0, Which::corrupted, l, h);
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          CHECK(o(i, j) == payload[ref.origin_offset + ((l * 3 + h) * 4 + i) * 4 + j]);
        }
      }
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          CHECK(c(i, j) == payload[ref.corrupted_offset + ((l * 3 + h) * 3 + i) * 3 + j]);
        }
      }
    }
  }
}

TEST_CASE("reader rejects malformed streams with distinct codes") {
  const auto m = attention_manifest(1, 2, {{3, 3}, {4, 2}});
  const auto bytes = write_pack(m, uniform_payload(m));

  std::vector<std::uint8_t> bad(bytes);
  std::memcpy(bad.data(), "XXXX", 4);
  CHECK(thrown_code(bad) == "bad magic");

  CHECK(thrown_code({bytes.begin(), bytes.begin() + 10}) == "truncated header");

  bad = bytes;
  bad[4] = 2;
  CHECK(thrown_code(bad) == "unsupported version");

  CHECK(thrown_code({bytes.begin(), bytes.end() - 4}) == "truncated payload");

  bad = bytes;
  bad.insert(bad.end(), {0, 0, 0, 0});
  CHECK(thrown_code(bad) == "size mismatch");

  bad = bytes;
  bad.push_back(0);
  CHECK(thrown_code(bad) == "size mismatch");

  bad = bytes;
  bad[16] = '[';
  CHECK(thrown_code(bad) == "manifest schema");
}

TEST_CASE("unsorted probe ids are refused on read and on write") {
  auto m = attention_manifest(1, 1, {{2, 2}, {2, 2}});
  std::swap(m.probes[0].probe_id, m.probes[1].probe_id);
  const auto payload = uniform_payload(m);
  CHECK_THROWS_AS(write_pack(m, payload), FormatError);

  // Hand-patch a sorted stream so the ids come out of order.
  auto sorted = attention_manifest(1, 1, {{2, 2}, {2, 2}});
  auto bytes = write_pack(sorted, payload);
  std::string text(bytes.begin() + 16, bytes.begin() + 16 + le32(bytes, 8));
  const auto a = text.find("p100"), b = text.find("p101");
  text[a + 3] = '1';
  text[b + 3] = '0';
  std::copy(text.begin(), text.end(), bytes.begin() + 16);
  CHECK(thrown_code(bytes) == "unsorted probe ids");
}

TEST_CASE("empty pack is rejected") {
  PackManifest m;
  m.kind = PackKind::fingerprint;
  m.layers = 1;
  m.heads = 1;
  m.rank = 3;
  try {
    write_pack(m, {});
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(e.code() == "probes non-empty");
  }
}

TEST_CASE("non-finite payload is a value error") {
  const auto m = attention_manifest(1, 1, {{2, 2}});
  auto payload = uniform_payload(m);
  payload[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(write_pack(m, payload), ValueError);
}

TEST_CASE("validate_pack diagnostics") {
  const auto m = attention_manifest(1, 1, {{3, 3}});
  const auto clean = uniform_payload(m);
  CHECK(validate_pack(m, clean).empty());

  auto payload = clean;
  payload[1] = 0.5f;  // (0, 1) is above the diagonal
  CHECK(has_code(validate_pack(m, payload), "non-causal mass"));

  payload = clean;
  payload[1] = 5e-7f;  // within the masking tolerance
  CHECK(validate_pack(m, payload).empty());

  payload = clean;
  payload[3] = 0.9f;  // row 1 now sums to 1.4
  CHECK(has_code(validate_pack(m, payload), "row sum exceeds 1"));

  payload = clean;
  payload[3] = 1.0009f;
  payload[4] = 0.0f;
  CHECK(validate_pack(m, payload).empty());

  payload = clean;
  payload[4] = -0.25f;
  CHECK(has_code(validate_pack(m, payload), "negative probability"));

  payload = clean;
  payload[0] = std::numeric_limits<float>::infinity();
  CHECK(has_code(validate_pack(m, payload), "non-finite value"));

  auto overlapping = m;
  overlapping.probes[0].corrupted_offset = 4;
  payload = clean;
  CHECK(has_code(validate_pack(overlapping, payload), "tensor overlap"));

  auto outside = m;
  outside.probes[0].corrupted_offset = 100;
  CHECK(has_code(validate_pack(outside, clean), "offset out of range"));

  CHECK(has_code(validate_pack(m, std::vector<float>(clean.size() + 1)), "size mismatch"));

  auto missing = m;
  missing.probes[0].corrupted_tokens = 0;
  CHECK(has_code(validate_pack(missing, clean), "missing tensor ref"));

  auto duplicate = attention_manifest(1, 1, {{2, 2}, {2, 2}});
  duplicate.probes[1].probe_id = duplicate.probes[0].probe_id;
  CHECK(has_code(validate_pack(duplicate, uniform_payload(duplicate)), "duplicate probe id"));
}

TEST_CASE("fingerprint packs: width and sign checks") {
  PackManifest m;
  m.kind = PackKind::fingerprint;
  m.layers = 2;
  m.heads = 2;
  m.rank = 3;
  m.probes = {{"a", "Code"}, {"b", "Math"}};
  std::vector<float> payload(24, 0.5f);
  CHECK(validate_pack(m, payload).empty());
  const Pack back = read_pack(write_pack(m, payload));
  CHECK(back.manifest.rank == 3);
  CHECK(back.payload == payload);

  payload[5] = -1.0f;
  CHECK(has_code(validate_pack(m, payload), "negative value"));
  CHECK(has_code(validate_pack(m, std::vector<float>(23)), "size mismatch"));
}

TEST_CASE("randomized packs survive write, read, write") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> dim(1, 3), tokens(1, 6);
  std::uniform_real_distribution<float> ud(0.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<int, int>> lengths;
    const int probes = dim(gen);
    for (int p = 0; p < probes; ++p) lengths.emplace_back(tokens(gen), tokens(gen));
    auto m = attention_manifest(static_cast<std::uint32_t>(dim(gen)),
                                static_cast<std::uint32_t>(dim(gen)), lengths);
    m.extra["trial"] = std::to_string(trial);
    std::vector<float> payload(m.declared_elements());
    for (auto& v : payload) v = ud(gen);
    const auto first = write_pack(m, payload);
    const Pack back = read_pack(first);
    CHECK(write_pack(back.manifest, back.payload) == first);
  }
}

TEST_CASE("hand-assembled stream as an external writer would produce it") {
  // One probe, L = H = 1, N = 2, Ñ = 1. Manifest keys in a different order
  // from ours and no "extra" block.
  const std::string manifest =
      R"({"format_version":1,"kind":"attention","layers":1,"heads":1,)"
      R"("model_id":"tiny-lm","created_unix":0,"probes":[{"probe_id":"math-001",)"
      R"("domain":"Math","origin_tokens":2,"corrupted_tokens":1,)"
      R"("origin_offset":0,"corrupted_offset":4}]})";
  const float values[] = {1.0f, 0.0f, 0.25f, 0.75f, 1.0f};
  std::vector<std::uint8_t> bytes = {'A', 'T', 'N', 'P', 1, 0, 0, 0};
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(manifest.size() >> (8 * i)));
  bytes.insert(bytes.end(), manifest.begin(), manifest.end());
  for (float v : values) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  const Pack pack = read_pack(bytes);
  CHECK(pack.manifest.model_id == "tiny-lm");
  CHECK(pack.manifest.extra.empty());
  CHECK(validate_pack(pack).empty());
  CHECK(attention_view(pack, 0, Which::origin, 0, 0)(1, 0) == 0.25f);
  CHECK(attention_view(pack, 0, Which::corrupted, 0, 0)(0, 0) == 1.0f);
}

TEST_CASE("files: save, load, missing path") {
  const auto dir = std::filesystem::temp_directory_path() / "attndiff_container_test";
  std::filesystem::create_directories(dir);
  const auto m = attention_manifest(1, 2, {{3, 2}});
  const auto payload = uniform_payload(m);
  save_pack(dir / "a.attnpack", m, payload);
  const Pack back = load_pack(dir / "a.attnpack");
  CHECK(back.payload == payload);
  CHECK_THROWS_AS(load_pack(dir / "missing.attnpack"), IoError);
  std::filesystem::remove_all(dir);
}
