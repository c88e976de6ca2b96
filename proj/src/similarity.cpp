#include "attndiff/similarity.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "attndiff/format.hpp"
#include "attndiff/rng.hpp"
#include "json.hpp"

namespace attndiff {

Matrix centered_gram(const Matrix& features) {
  if (features.rows() < 2) {
    throw InvalidArgument("too few probes", "centering needs M >= 2, got " +
                                                std::to_string(features.rows()));
  }
  if (!all_finite(features)) throw ValueError("non-finite value", "fingerprint");
  // H F F^T H = (H F)(H F)^T: center the features, then form the Gram.
  const Matrix centered = features.rowwise() - features.colwise().mean();
  return centered * centered.transpose();
}

double cka_from_grams(const Matrix& kc, const Matrix& kc_prime) {
  if (kc.rows() != kc_prime.rows() || kc.cols() != kc_prime.cols()) {
    throw InvalidArgument("probe count mismatch",
                          std::to_string(kc.rows()) + " vs " + std::to_string(kc_prime.rows()));
  }
  const double norm = kc.norm();
  const double norm_prime = kc_prime.norm();
  if (norm == 0.0 || norm_prime == 0.0) {
    throw DegenerateError("degenerate fingerprint",
                          "centered Gram has zero norm (all probes identical)");
  }
  return kc.cwiseProduct(kc_prime).sum() / (norm * norm_prime);
}

double cka(const Matrix& features, const Matrix& other) {
  if (features.rows() != other.rows()) {
    throw InvalidArgument("probe count mismatch", std::to_string(features.rows()) +
                                                      " vs " + std::to_string(other.rows()));
  }
  return cka_from_grams(centered_gram(features), centered_gram(other));
}

BoundCheck epsilon_and_bound_from_grams(const Matrix& kc, const Matrix& kc_prime) {
  BoundCheck out;
  out.cka = cka_from_grams(kc, kc_prime);
  out.epsilon = (kc - kc_prime).norm() / kc.norm();
  out.bound_2eps2 = 2.0 * out.epsilon * out.epsilon;
  out.one_minus_cka = 1.0 - out.cka;
  out.applicable = out.epsilon < 1.0;
  out.holds = out.one_minus_cka <= out.bound_2eps2 + kBoundSlack;
  return out;
}

BoundCheck epsilon_and_bound(const Matrix& victim, const Matrix& suspect) {
  if (victim.rows() != suspect.rows()) {
    throw InvalidArgument("probe count mismatch", std::to_string(victim.rows()) +
                                                      " vs " + std::to_string(suspect.rows()));
  }
  return epsilon_and_bound_from_grams(centered_gram(victim), centered_gram(suspect));
}

std::vector<std::optional<double>> LayerwiseCka::diagonal() const {
  std::vector<std::optional<double>> out;
  if (victim_layers != suspect_layers) return out;
  for (int l = 0; l < victim_layers; ++l) out.push_back(at(l, l));
  return out;
}

namespace {

Matrix layer_block(const FingerprintMatrix& fp, int layer) {
  const Eigen::Index block = static_cast<Eigen::Index>(fp.heads) * fp.rank;
  return fp.values.middleCols(layer * block, block);
}

void check_layer_structure(const FingerprintMatrix& fp, const char* which) {
  const Eigen::Index expected =
      static_cast<Eigen::Index>(fp.layers) * fp.heads * fp.rank;
  if (fp.layers < 1 || fp.heads < 1 || fp.rank < 1 || fp.width() != expected) {
    throw InvalidArgument("width mismatch",
                          std::string(which) + " width " + std::to_string(fp.width()) +
                              " is not layers*heads*rank = " + std::to_string(expected));
  }
}

}  // namespace

LayerwiseCka layerwise_cka(const FingerprintMatrix& victim,
                           const FingerprintMatrix& suspect) {
  check_layer_structure(victim, "victim");
  check_layer_structure(suspect, "suspect");
  if (victim.rows() != suspect.rows()) {
    throw InvalidArgument("probe count mismatch", std::to_string(victim.rows()) +
                                                      " vs " + std::to_string(suspect.rows()));
  }
  std::vector<Matrix> victim_grams, suspect_grams;
  for (int l = 0; l < victim.layers; ++l) victim_grams.push_back(centered_gram(layer_block(victim, l)));
  for (int l = 0; l < suspect.layers; ++l) suspect_grams.push_back(centered_gram(layer_block(suspect, l)));

  LayerwiseCka out;
  out.victim_layers = victim.layers;
  out.suspect_layers = suspect.layers;
  for (const auto& kv : victim_grams) {
    for (const auto& ks : suspect_grams) {
      try {
        out.cells.emplace_back(cka_from_grams(kv, ks));
      } catch (const DegenerateError&) {
        out.cells.emplace_back(std::nullopt);
      }
    }
  }
  return out;
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::related: return "related";
    case Verdict::unrelated: return "unrelated";
    case Verdict::inconclusive: break;
  }
  return "inconclusive";
}

Verdict classify(double cka, const Thresholds& t) {
  if (cka >= t.upper) return Verdict::related;
  if (cka <= t.lower) return Verdict::unrelated;
  return Verdict::inconclusive;
}

std::string probe_ids_hash(const std::vector<std::string>& ids) {
  std::uint64_t h = fnv1a64("");
  for (const auto& id : ids) {
    h = fnv1a64(id, h);
    h = fnv1a64("\n", h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CompareReport compare_report(const FingerprintMatrix& victim,
                             const FingerprintMatrix& suspect,
                             const Thresholds& thresholds) {
  if (!(thresholds.lower <= thresholds.upper)) {
    throw InvalidArgument("invalid thresholds", "lower must not exceed upper");
  }
  if (victim.probe_ids != suspect.probe_ids) {
    std::string detail = std::to_string(victim.probe_ids.size()) + " vs " +
                         std::to_string(suspect.probe_ids.size()) + " probes";
    const auto n = std::min(victim.probe_ids.size(), suspect.probe_ids.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (victim.probe_ids[i] != suspect.probe_ids[i]) {
        detail += "; first difference at row " + std::to_string(i) + " ('" +
                  victim.probe_ids[i] + "' vs '" + suspect.probe_ids[i] + "')";
        break;
      }
    }
    throw ValidationError("probe set mismatch", detail);
  }
  CompareReport r;
  r.bound = epsilon_and_bound(victim.values, suspect.values);
  r.cka_raw = r.bound.cka;
  r.cka = std::clamp(r.cka_raw, 0.0, 1.0);
  r.verdict = classify(r.cka, thresholds);
  r.thresholds = thresholds;
  r.rows = victim.rows();
  r.width = victim.width();
  r.width_prime = suspect.width();
  r.probe_ids_hash = probe_ids_hash(victim.probe_ids);
  return r;
}

std::string report_to_json(const CompareReport& r) {
  nlohmann::ordered_json j;
  j["cka"] = r.cka;
  j["cka_raw"] = r.cka_raw;
  j["epsilon"] = r.bound.epsilon;
  j["bound_2eps2"] = r.bound.bound_2eps2;
  j["one_minus_cka"] = r.bound.one_minus_cka;
  j["bound_holds"] = r.bound.holds;
  j["verdict"] = to_string(r.verdict);
  j["thresholds"] = {{"upper", r.thresholds.upper}, {"lower", r.thresholds.lower}};
  j["M"] = r.rows;
  j["D"] = r.width;
  j["D_prime"] = r.width_prime;
  j["probe_ids_hash"] = r.probe_ids_hash;
  return j.dump(2);
}

std::string report_to_text(const CompareReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "CKA            %.6f (raw %s)\n"
                "epsilon        %.6f\n"
                "1 - CKA        %.6f\n"
                "2 eps^2        %.6f  bound %s%s\n"
                "verdict        %s  (related >= %.2f, unrelated <= %.2f)\n"
                "M=%lld D=%lld D'=%lld probes %s\n",
                r.cka, format_double(r.cka_raw).c_str(), r.bound.epsilon,
                r.bound.one_minus_cka, r.bound.bound_2eps2,
                r.bound.holds ? "holds" : "VIOLATED",
                r.bound.applicable ? "" : " (eps >= 1, trivially)",
                std::string(to_string(r.verdict)).c_str(), r.thresholds.upper,
                r.thresholds.lower, static_cast<long long>(r.rows),
                static_cast<long long>(r.width), static_cast<long long>(r.width_prime),
                r.probe_ids_hash.c_str());
  return buf;
}

}  // namespace attndiff
