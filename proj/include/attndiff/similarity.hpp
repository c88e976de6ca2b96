#pragma once

// Centered linear CKA between fingerprint matrices and the diagnostics
// built on it.

#include <optional>
#include <string>
#include <vector>

#include "attndiff/diffcore.hpp"
#include "attndiff/spectral.hpp"

namespace attndiff {

/// H (F F^T) H with H = I - (1/M) 11^T. Requires M >= 2.
Matrix centered_gram(const Matrix& features);

/// <Kc, Kc'>_F / (||Kc||_F ||Kc'||_F) on centered Grams. Rows must be
/// aligned; widths may differ. The raw value is returned (it can dip a
/// hair below zero through rounding). Throws DegenerateError when either
/// centered Gram is zero.
double cka(const Matrix& features, const Matrix& other);

/// Same, from precomputed centered Grams.
double cka_from_grams(const Matrix& centered, const Matrix& other_centered);

struct BoundCheck {
  double cka = 0.0;
  double epsilon = 0.0;         // ||Kc - Kc'||_F / ||Kc||_F, victim-anchored
  double bound_2eps2 = 0.0;     // 2 eps^2
  double one_minus_cka = 0.0;
  bool applicable = false;      // eps < 1
  bool holds = false;           // 1 - CKA <= 2 eps^2 (+1e-12 slack)
};

inline constexpr double kBoundSlack = 1e-12;

BoundCheck epsilon_and_bound(const Matrix& victim, const Matrix& suspect);
BoundCheck epsilon_and_bound_from_grams(const Matrix& victim_centered,
                                        const Matrix& suspect_centered);

/// Per-layer CKA blocks: cell (a, b) compares victim layer a with suspect
/// layer b. nullopt marks a degenerate block (zero centered Gram).
struct LayerwiseCka {
  int victim_layers = 0;
  int suspect_layers = 0;
  std::vector<std::optional<double>> cells;  // row-major victim x suspect

  std::optional<double> at(int a, int b) const {
    return cells[static_cast<std::size_t>(a) * suspect_layers + b];
  }
  /// Diagonal profile; empty unless both sides have the same depth.
  std::vector<std::optional<double>> diagonal() const;
};

LayerwiseCka layerwise_cka(const FingerprintMatrix& victim,
                           const FingerprintMatrix& suspect);

enum class Verdict { related, inconclusive, unrelated };
std::string_view to_string(Verdict verdict);

struct Thresholds {
  double upper = 0.90;
  double lower = 0.50;
};

Verdict classify(double cka, const Thresholds& thresholds);

struct CompareReport {
  double cka = 0.0;      // clamped to [0, 1]
  double cka_raw = 0.0;
  BoundCheck bound;
  Verdict verdict = Verdict::inconclusive;
  Thresholds thresholds;
  Eigen::Index rows = 0;
  Eigen::Index width = 0;
  Eigen::Index width_prime = 0;
  std::string probe_ids_hash;
};

/// Refuses ("probe set mismatch") unless both fingerprints list identical
/// probe ids in identical order.
CompareReport compare_report(const FingerprintMatrix& victim,
                             const FingerprintMatrix& suspect,
                             const Thresholds& thresholds = {});

/// FNV-1a over the newline-joined ids, as 16 hex digits.
std::string probe_ids_hash(const std::vector<std::string>& ids);

/// Keys in fixed order: cka, cka_raw, epsilon, bound_2eps2, one_minus_cka,
/// bound_holds, verdict, thresholds, M, D, D_prime, probe_ids_hash.
std::string report_to_json(const CompareReport& report);
std::string report_to_text(const CompareReport& report);

}  // namespace attndiff
