#pragma once

// Structural statistics of differential attention: how much attention
// moves, how concentrated the change is, and where it lands.

#include <array>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "attndiff/container.hpp"
#include "attndiff/diffcore.hpp"

namespace attndiff {

struct RoutingStats {
  double frob = 0.0;            // ||dA||_F
  double spectral_ratio = 0.0;  // sigma_1^2 / sum sigma_k^2
  double effective_rank = 0.0;  // exp(entropy of sigma_k / sum sigma_j)
  double gini_col = 0.0;        // Gini of column l2 norms
  double gini_row = 0.0;        // Gini of row l2 norms
  double delta_entropy = 0.0;   // H(corrupted) - H(origin), nats
  double locality = 0.0;        // energy share with |i - j| <= 2
  // dA == 0: ratio, rank, Ginis and locality are undefined and set to 0.
  bool degenerate = false;
};

inline constexpr int kLocalityBand = 2;

/// G(x) = 1 - (2 * sum_i (i-1) x_(i) + s) / (m s), x sorted non-increasing,
/// s = sum x. Returns 0 when s = 0. Throws ValueError on negative entries.
double gini_coefficient(const Eigen::VectorXd& values);

/// Mean row entropy -(1/T) sum_ij A_ij log A_ij with 0 log 0 = 0.
double attention_entropy(const Matrix& attention);

/// All inputs share the pooled resolution N*.
RoutingStats compute_routing_stats(const Matrix& origin, const Matrix& corrupted,
                                   const Matrix& delta);

struct InstanceStats {
  std::string probe_id;
  int layer = 0;
  int head = 0;
  RoutingStats stats;
};

/// One row per (probe, layer, head) in canonical order.
std::vector<InstanceStats> collect_instance_stats(const Pack& pack, int threads = 1);

inline constexpr std::array<std::string_view, 7> kMetricNames = {
    "frob", "rho", "r_eff", "gini_col", "gini_row", "d_entropy", "locality"};

/// Metric value by name; throws InvalidArgument("unknown metric").
double metric_value(const RoutingStats& stats, std::string_view metric);

/// frob and d_entropy are defined everywhere; the other metrics skip
/// degenerate (zero dA) instances so conventions do not bias the mean.
bool metric_defined(const RoutingStats& stats, std::string_view metric);

struct MetricSummary {
  std::string metric;
  std::size_t count = 0;  // instances contributing
  double mean = 0.0;
  double sd = 0.0;        // population SD (divide by count)
};

std::vector<MetricSummary> aggregate_stats(const std::vector<InstanceStats>& instances);
/// Throws InvalidArgument("empty pack") when there is nothing to aggregate.
std::vector<MetricSummary> aggregate_stats(const Pack& pack, int threads = 1);

struct LayerProfileRow {
  int layer = 0;
  double relative_depth = 0.0;  // l / (L - 1), 0 when L = 1
  std::size_t count = 0;
  double mean = 0.0;
  double sd = 0.0;
};

std::vector<LayerProfileRow> layer_profile(const std::vector<InstanceStats>& instances,
                                           int layers, std::string_view metric);
std::vector<LayerProfileRow> layer_profile(const Pack& pack, std::string_view metric,
                                           int threads = 1);

void write_instance_csv(std::ostream& out, const std::vector<InstanceStats>& instances);
void write_summary_csv(std::ostream& out, const std::vector<MetricSummary>& summary);
void write_profile_csv(std::ostream& out, std::string_view metric,
                       const std::vector<LayerProfileRow>& rows);

}  // namespace attndiff
