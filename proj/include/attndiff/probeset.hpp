#pragma once

// Probe pairs: an origin prompt and a corrupted prompt that differ by a
// single whitespace-delimited word (the pivot).

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attndiff/error.hpp"

namespace attndiff {

inline constexpr int kDefaultTargetWordLen = 30;
inline constexpr int kLengthWindow = 5;

struct Pivot {
  std::string origin_word;
  std::string corrupted_word;
};

struct ProbePair {
  std::string id;
  std::string domain;
  std::string origin_text;
  std::string corrupted_text;
  Pivot pivot;
};

struct ProbeSet {
  int version = 1;
  int target_word_len = kDefaultTargetWordLen;
  std::vector<ProbePair> probes;  // sorted by id, ids unique
};

/// The six built-in domains; custom domain strings are also accepted.
const std::vector<std::string>& standard_domains();

/// Whitespace split, then strip leading/trailing ASCII punctuation from each
/// token. Tokens that are pure punctuation are dropped.
std::vector<std::string> pivot_words(std::string_view text);

std::string strip_punctuation(std::string_view word);

/// Empty iff the texts differ in exactly one word (same word count), that
/// word pair equals the declared pivot (case-sensitive), and both word
/// counts lie within target_word_len +/- 5.
std::vector<Diagnostic> validate_probe_pair(const ProbePair& pair,
                                            int target_word_len);

/// Parse the probe JSON document, sort probes by id and validate every
/// pair. Throws ValidationError ("schema error", "duplicate id",
/// "invalid probes") with per-probe diagnostics.
ProbeSet load_probeset(std::string_view json_text);
ProbeSet load_probeset_file(const std::string& path);

std::string probeset_to_json(const ProbeSet& set);

/// Stratified split: within each domain ceil(fraction * n_domain) probes,
/// chosen by a seeded shuffle, go to held_out. Deterministic given seed.
std::pair<ProbeSet, ProbeSet> split_pool(const ProbeSet& set,
                                         double held_out_fraction,
                                         std::uint64_t seed);

}  // namespace attndiff
