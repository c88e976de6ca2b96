#include "attndiff/routing_stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "attndiff/format.hpp"
#include "attndiff/parallel.hpp"
#include "attndiff/spectral.hpp"

namespace attndiff {

namespace {

void require_square_same(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != a.cols() || a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument("shape mismatch", what);
  }
}

struct Accumulator {
  std::vector<double> values;

  void add(double v) { values.push_back(v); }

  // Two-pass mean/SD; population variance.
  void finish(double& mean, double& sd) const {
    if (values.empty()) {
      mean = 0.0;
      sd = 0.0;
      return;
    }
    double s = 0.0;
    for (double v : values) s += v;
    mean = s / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    sd = std::sqrt(ss / static_cast<double>(values.size()));
  }
};

}  // namespace

double gini_coefficient(const Eigen::VectorXd& values) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw ValueError("non-finite value", "gini input");
    if (values[i] < 0.0) throw ValueError("negative entry", "gini input");
  }
  const auto m = values.size();
  if (m == 0) return 0.0;
  std::vector<double> x(values.data(), values.data() + m);
  std::sort(x.begin(), x.end(), std::greater<>());
  double s = 0.0, weighted = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    s += x[i];
    weighted += static_cast<double>(i) * x[i];
  }
  if (s == 0.0) return 0.0;
  return 1.0 - (2.0 * weighted + s) / (static_cast<double>(m) * s);
}

double attention_entropy(const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double v = a(i, j);
      if (v > 0.0) total -= v * std::log(v);
    }
  }
  return total / static_cast<double>(a.rows());
}

RoutingStats compute_routing_stats(const Matrix& origin, const Matrix& corrupted,
                                   const Matrix& delta) {
  require_square_same(delta, origin, "origin vs delta");
  require_square_same(delta, corrupted, "corrupted vs delta");
  if (!all_finite(origin) || !all_finite(corrupted) || !all_finite(delta)) {
    throw ValueError("non-finite value", "routing statistics input");
  }
  RoutingStats s;
  s.frob = delta.norm();
  s.delta_entropy = attention_entropy(corrupted) - attention_entropy(origin);
  if (s.frob == 0.0) {
    s.degenerate = true;
    return s;
  }

  const Eigen::VectorXd sigma = singular_values(delta);
  const double sum_sq = sigma.squaredNorm();
  s.spectral_ratio = sigma[0] * sigma[0] / sum_sq;
  const double sum = sigma.sum();
  double entropy = 0.0;
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    const double p = sigma[k] / sum;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  s.effective_rank = std::exp(entropy);

  s.gini_col = gini_coefficient(delta.colwise().norm().transpose());
  s.gini_row = gini_coefficient(delta.rowwise().norm());

  double band = 0.0, total = 0.0;
  for (Eigen::Index j = 0; j < delta.cols(); ++j) {
    for (Eigen::Index i = 0; i < delta.rows(); ++i) {
      const double e = delta(i, j) * delta(i, j);
      total += e;
      if (std::abs(i - j) <= kLocalityBand) band += e;
    }
  }
  s.locality = band / total;
  return s;
}

std::vector<InstanceStats> collect_instance_stats(const Pack& pack, int threads) {
  const auto& m = pack.manifest;
  if (m.kind != PackKind::attention) {
    throw InvalidArgument("wrong pack kind", "statistics need an attention pack");
  }
  auto diags = validate_pack(pack);
  if (!diags.empty()) {
    const std::string first = diags.front().to_string();
    throw ValidationError("invalid pack", first, std::move(diags));
  }
  const std::size_t per_probe = std::size_t{m.layers} * m.heads;
  std::vector<InstanceStats> out(m.probes.size() * per_probe);
  parallel_for(m.probes.size(), threads, [&](std::size_t p) {
    for (std::uint32_t l = 0; l < m.layers; ++l) {
      for (std::uint32_t h = 0; h < m.heads; ++h) {
        const int li = static_cast<int>(l), hi = static_cast<int>(h);
        const auto origin = mask_causal(
            attention_view(pack, p, Which::origin, l, h).cast<double>(), li, hi);
        const auto corrupted = mask_causal(
            attention_view(pack, p, Which::corrupted, l, h).cast<double>(), li, hi);
        const auto aligned = align_pair(origin, corrupted);
        auto& slot = out[p * per_probe + std::size_t{l} * m.heads + h];
        slot.probe_id = m.probes[p].probe_id;
        slot.layer = li;
        slot.head = hi;
        slot.stats = compute_routing_stats(aligned.origin, aligned.corrupted,
                                           aligned.delta.values);
      }
    }
  });
  return out;
}

double metric_value(const RoutingStats& s, std::string_view metric) {
  if (metric == "frob") return s.frob;
  if (metric == "rho") return s.spectral_ratio;
  if (metric == "r_eff") return s.effective_rank;
  if (metric == "gini_col") return s.gini_col;
  if (metric == "gini_row") return s.gini_row;
  if (metric == "d_entropy") return s.delta_entropy;
  if (metric == "locality") return s.locality;
  throw InvalidArgument("unknown metric", std::string(metric));
}

bool metric_defined(const RoutingStats& s, std::string_view metric) {
  metric_value(s, metric);  // validates the name
  return !s.degenerate || metric == "frob" || metric == "d_entropy";
}

std::vector<MetricSummary> aggregate_stats(const std::vector<InstanceStats>& instances) {
  std::vector<MetricSummary> out;
  for (auto name : kMetricNames) {
    Accumulator acc;
    for (const auto& inst : instances) {
      if (metric_defined(inst.stats, name)) acc.add(metric_value(inst.stats, name));
    }
    MetricSummary summary;
    summary.metric = std::string(name);
    summary.count = acc.values.size();
    acc.finish(summary.mean, summary.sd);
    out.push_back(std::move(summary));
  }
  return out;
}

std::vector<MetricSummary> aggregate_stats(const Pack& pack, int threads) {
  if (pack.manifest.probes.empty()) throw InvalidArgument("empty pack", "no probes");
  return aggregate_stats(collect_instance_stats(pack, threads));
}

std::vector<LayerProfileRow> layer_profile(const std::vector<InstanceStats>& instances,
                                           int layers, std::string_view metric) {
  metric_value(RoutingStats{}, metric);
  std::vector<Accumulator> per_layer(static_cast<std::size_t>(std::max(layers, 0)));
  for (const auto& inst : instances) {
    if (inst.layer < 0 || inst.layer >= layers) {
      throw InvalidArgument("layer out of range", std::to_string(inst.layer));
    }
    if (metric_defined(inst.stats, metric)) {
      per_layer[static_cast<std::size_t>(inst.layer)].add(metric_value(inst.stats, metric));
    }
  }
  std::vector<LayerProfileRow> out;
  for (int l = 0; l < layers; ++l) {
    LayerProfileRow row;
    row.layer = l;
    row.relative_depth = layers > 1 ? static_cast<double>(l) / (layers - 1) : 0.0;
    row.count = per_layer[static_cast<std::size_t>(l)].values.size();
    per_layer[static_cast<std::size_t>(l)].finish(row.mean, row.sd);
    out.push_back(row);
  }
  return out;
}

std::vector<LayerProfileRow> layer_profile(const Pack& pack, std::string_view metric,
                                           int threads) {
  metric_value(RoutingStats{}, metric);
  return layer_profile(collect_instance_stats(pack, threads),
                       static_cast<int>(pack.manifest.layers), metric);
}

void write_instance_csv(std::ostream& out, const std::vector<InstanceStats>& instances) {
  out << "probe_id,layer,head,frob,rho,r_eff,gini_col,gini_row,d_entropy,locality\n";
  for (const auto& inst : instances) {
    const auto& s = inst.stats;
    out << inst.probe_id << ',' << inst.layer << ',' << inst.head << ','
        << format_double(s.frob) << ',' << format_double(s.spectral_ratio) << ','
        << format_double(s.effective_rank) << ',' << format_double(s.gini_col) << ','
        << format_double(s.gini_row) << ',' << format_double(s.delta_entropy) << ','
        << format_double(s.locality) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const std::vector<MetricSummary>& summary) {
  out << "metric,count,mean,sd\n";
  for (const auto& s : summary) {
    out << s.metric << ',' << s.count << ',' << format_double(s.mean) << ','
        << format_double(s.sd) << '\n';
  }
}

void write_profile_csv(std::ostream& out, std::string_view metric,
                       const std::vector<LayerProfileRow>& rows) {
  out << "metric,layer,relative_depth,count,mean,sd\n";
  for (const auto& r : rows) {
    out << metric << ',' << r.layer << ',' << format_double(r.relative_depth) << ','
        << r.count << ',' << format_double(r.mean) << ',' << format_double(r.sd) << '\n';
  }
}

}  // namespace attndiff
