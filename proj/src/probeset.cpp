#include "attndiff/probeset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "attndiff/rng.hpp"
#include "json.hpp"

namespace attndiff {

namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string quoted(const std::string& s) { return "'" + s + "'"; }

void sort_probes(std::vector<ProbePair>& probes) {
  std::sort(probes.begin(), probes.end(),
            [](const ProbePair& a, const ProbePair& b) { return a.id < b.id; });
}

}  // namespace

const std::vector<std::string>& standard_domains() {
  static const std::vector<std::string> domains = {
      "Code", "Math", "Economics", "Medicine", "Daily QA", "Safe Alignment"};
  return domains;
}

std::string strip_punctuation(std::string_view word) {
  std::size_t b = 0, e = word.size();
  while (b < e && is_punct(word[b])) ++b;
  while (e > b && is_punct(word[e - 1])) --e;
  return std::string(word.substr(b, e - b));
}

std::vector<std::string> pivot_words(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& raw : split_whitespace(text)) {
    auto w = strip_punctuation(raw);
    if (!w.empty()) out.push_back(std::move(w));
  }
  return out;
}

std::vector<Diagnostic> validate_probe_pair(const ProbePair& pair,
                                            int target_word_len) {
  std::vector<Diagnostic> out;
  const auto origin = pivot_words(pair.origin_text);
  const auto corrupted = pivot_words(pair.corrupted_text);

  auto check_length = [&](const char* which, std::size_t count) {
    const long diff = static_cast<long>(count) - target_word_len;
    if (std::abs(diff) > kLengthWindow) {
      out.push_back({"length window ±5", std::string(which) + " has " +
                                             std::to_string(count) +
                                             " words, target " +
                                             std::to_string(target_word_len)});
    }
  };
  check_length("origin", origin.size());
  check_length("corrupted", corrupted.size());

  if (origin.size() != corrupted.size()) {
    out.push_back({"pivot discipline violated",
                   "word counts differ (" + std::to_string(origin.size()) + " vs " +
                       std::to_string(corrupted.size()) + "); only substitution is allowed"});
    return out;
  }

  std::vector<std::size_t> differing;
  for (std::size_t i = 0; i < origin.size(); ++i) {
    if (origin[i] != corrupted[i]) differing.push_back(i);
  }
  if (differing.empty()) {
    out.push_back({"no pivot found", "texts are identical at the word level"});
  } else if (differing.size() > 1) {
    std::string where;
    for (auto i : differing) {
      if (!where.empty()) where += ", ";
      where += quoted(origin[i]) + "->" + quoted(corrupted[i]);
    }
    out.push_back({"pivot discipline violated",
                   std::to_string(differing.size()) + " words differ: " + where});
  } else {
    const auto& ow = origin[differing.front()];
    const auto& cw = corrupted[differing.front()];
    if (ow != strip_punctuation(pair.pivot.origin_word) ||
        cw != strip_punctuation(pair.pivot.corrupted_word)) {
      out.push_back({"pivot mismatch",
                     "declared (" + pair.pivot.origin_word + ", " +
                         pair.pivot.corrupted_word + ") but texts differ at (" + ow +
                         ", " + cw + ")"});
    }
  }
  return out;
}

ProbeSet load_probeset(std::string_view json_text) {
  ProbeSet set;
  try {
    const auto j = nlohmann::json::parse(json_text);
    set.version = j.at("version").get<int>();
    set.target_word_len = j.value("target_word_len", kDefaultTargetWordLen);
    for (const auto& p : j.at("probes")) {
      ProbePair pair;
      pair.id = p.at("id").get<std::string>();
      pair.domain = p.at("domain").get<std::string>();
      pair.origin_text = p.at("origin").get<std::string>();
      pair.corrupted_text = p.at("corrupted").get<std::string>();
      const auto& pivot = p.at("pivot");
      pair.pivot.origin_word = pivot.at("origin_word").get<std::string>();
      pair.pivot.corrupted_word = pivot.at("corrupted_word").get<std::string>();
      set.probes.push_back(std::move(pair));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("schema error", e.what());
  }
  if (set.version != 1) {
    throw ValidationError("schema error", "unsupported probe set version " +
                                              std::to_string(set.version));
  }
  if (set.target_word_len < 1) {
    throw ValidationError("schema error", "target_word_len must be positive");
  }

  sort_probes(set.probes);
  std::vector<Diagnostic> problems;
  for (std::size_t i = 0; i < set.probes.size(); ++i) {
    const auto& p = set.probes[i];
    if (p.id.empty()) problems.push_back({"schema error", "probe with empty id"});
    if (i > 0 && set.probes[i - 1].id == p.id) {
      throw ValidationError("duplicate id", p.id);
    }
  }
  for (const auto& p : set.probes) {
    for (auto d : validate_probe_pair(p, set.target_word_len)) {
      d.detail = "probe " + p.id + ": " + d.detail;
      problems.push_back(std::move(d));
    }
  }
  if (!problems.empty()) {
    const std::string summary = std::to_string(problems.size()) +
                                " problem(s), first: " + problems.front().to_string();
    throw ValidationError("invalid probes", summary, std::move(problems));
  }
  return set;
}

ProbeSet load_probeset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("unreadable file", path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return load_probeset(buffer.str());
  } catch (const ValidationError& e) {
    throw ValidationError(e.code(), path + ": " + e.what(), e.diagnostics());
  }
}

std::string probeset_to_json(const ProbeSet& set) {
  nlohmann::ordered_json j;
  j["version"] = set.version;
  j["target_word_len"] = set.target_word_len;
  auto probes = nlohmann::ordered_json::array();
  for (const auto& p : set.probes) {
    nlohmann::ordered_json o;
    o["id"] = p.id;
    o["domain"] = p.domain;
    o["origin"] = p.origin_text;
    o["corrupted"] = p.corrupted_text;
    o["pivot"] = {{"origin_word", p.pivot.origin_word},
                  {"corrupted_word", p.pivot.corrupted_word}};
    probes.push_back(std::move(o));
  }
  j["probes"] = std::move(probes);
  return j.dump(2) + "\n";
}

std::pair<ProbeSet, ProbeSet> split_pool(const ProbeSet& set,
                                         double held_out_fraction,
                                         std::uint64_t seed) {
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) {
    throw InvalidArgument("fraction outside (0,1)",
                          std::to_string(held_out_fraction));
  }
  std::map<std::string, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < set.probes.size(); ++i) {
    by_domain[set.probes[i].domain].push_back(i);
  }

  ProbeSet active{set.version, set.target_word_len, {}};
  ProbeSet held_out{set.version, set.target_word_len, {}};
  for (auto& [domain, indices] : by_domain) {
    SplitMix64 rng(derive_seed(seed, fnv1a64(domain)));
    rng.shuffle(indices);
    const double n = static_cast<double>(indices.size());
    // The epsilon keeps products like 0.3 * 10 = 3.0000000000000004 at 3.
    auto take = static_cast<std::size_t>(std::ceil(held_out_fraction * n - 1e-9));
    take = std::min(take, indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      (k < take ? held_out : active).probes.push_back(set.probes[indices[k]]);
    }
  }
  if (active.probes.empty()) {
    throw InvalidArgument("active set empty",
                          "held-out fraction leaves no active probes");
  }
  sort_probes(active.probes);
  sort_probes(held_out.probes);
  return {std::move(active), std::move(held_out)};
}

}  // namespace attndiff
