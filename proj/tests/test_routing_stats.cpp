#include "attndiff/routing_stats.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "attndiff/synth.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace attndiff;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

RoutingStats stats_for(const Matrix& delta) {
  const Eigen::Index n = delta.rows();
  return compute_routing_stats(Matrix::Identity(n, n), Matrix::Identity(n, n), delta);
}

// Mean Gini difference over all ordered pairs, divided by twice the mean.
double gini_oracle(const Eigen::VectorXd& x) {
  double diff = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (Eigen::Index j = 0; j < x.size(); ++j) diff += std::abs(x[i] - x[j]);
  }
  const double m = static_cast<double>(x.size());
  return diff / (2.0 * m * m * x.mean());
}

}  // namespace

TEST_CASE("Gini closed forms") {
  CHECK(gini_coefficient(vec({1, 1, 1, 1})) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(gini_coefficient(vec({1, 0, 0, 0})) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(gini_coefficient(vec({0, 0, 5})) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(gini_coefficient(vec({1, 2, 3, 4})) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(gini_coefficient(vec({0, 0, 0})) == 0.0);
  CHECK(gini_coefficient(vec({7})) == 0.0);
  CHECK(gini_coefficient(Eigen::VectorXd()) == 0.0);
  CHECK_THROWS_AS(gini_coefficient(vec({1, -1})), ValueError);
  CHECK_THROWS_AS(gini_coefficient(vec({1, std::nan("")})), ValueError);
}

TEST_CASE("Gini agrees with the mean-difference form and its invariances") {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> ud(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(2 + trial % 20);
    for (auto& v : x) v = ud(gen);
    const double g = gini_coefficient(x);
    CHECK(g == doctest::Approx(gini_oracle(x)).epsilon(1e-12));
    CHECK(g >= 0.0);
    CHECK(g <= 1.0 - 1.0 / static_cast<double>(x.size()) + 1e-12);
    CHECK(gini_coefficient(4.5 * x) == doctest::Approx(g).epsilon(1e-13));
    Eigen::VectorXd reversed = x.reverse();
    CHECK(gini_coefficient(reversed) == doctest::Approx(g).epsilon(1e-14));
  }
}

TEST_CASE("attention entropy") {
  CHECK(attention_entropy(Matrix::Identity(5, 5)) == 0.0);
  Matrix uniform = Matrix::Zero(4, 4);
  double expected = 0.0;
  for (int i = 0; i < 4; ++i) {
    uniform.row(i).head(i + 1).setConstant(1.0 / (i + 1));
    expected += std::log(i + 1.0);
  }
  CHECK(attention_entropy(uniform) == doctest::Approx(expected / 4.0).epsilon(1e-14));
  CHECK(attention_entropy(Matrix()) == 0.0);
}

TEST_CASE("rank-one change concentrates the spectrum") {
  std::mt19937_64 gen(42);
  const Matrix u = oracle::random_matrix(gen, 9, 1), v = oracle::random_matrix(gen, 9, 1);
  const auto s = stats_for(u * v.transpose());
  CHECK(s.spectral_ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.effective_rank == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.frob == doctest::Approx(u.norm() * v.norm()).epsilon(1e-13));
  CHECK_FALSE(s.degenerate);
}

TEST_CASE("spectral ratio and effective rank from a known spectrum") {
  Matrix d = Matrix::Zero(4, 4);
  d(0, 3) = 3.0;
  d(2, 1) = -1.0;
  const auto s = stats_for(d);
  CHECK(s.spectral_ratio == doctest::Approx(0.9).epsilon(1e-14));
  const double h = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  CHECK(s.effective_rank == doctest::Approx(std::exp(h)).epsilon(1e-12));
  CHECK(s.frob == doctest::Approx(std::sqrt(10.0)).epsilon(1e-15));
  // Column norms (0, 1, 0, 3); row norms (3, 0, 1, 0).
  CHECK(s.gini_col == doctest::Approx(gini_coefficient(vec({0, 1, 0, 3}))).epsilon(1e-15));
  CHECK(s.gini_row == doctest::Approx(s.gini_col).epsilon(1e-15));
  // Only (2,1) lies within the band: 1 / 10.
  CHECK(s.locality == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("identity-sized change has rank N and full locality") {
  const auto s = stats_for(0.1 * Matrix::Identity(6, 6));
  CHECK(s.effective_rank == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(s.spectral_ratio == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(s.locality == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.gini_col == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("locality of a constant change counts band cells") {
  for (Eigen::Index n = 1; n <= 10; ++n) {
    Eigen::Index band = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) band += std::abs(i - j) <= 2 ? 1 : 0;
    }
    const Eigen::Index closed = n + 2 * std::max<Eigen::Index>(n - 1, 0) +
                                2 * std::max<Eigen::Index>(n - 2, 0);
    CHECK(band == closed);
    const auto s = stats_for(Matrix::Constant(n, n, 0.3));
    CHECK(s.locality == doctest::Approx(static_cast<double>(closed) / (n * n)).epsilon(1e-14));
  }
}

TEST_CASE("a probe compared with itself is degenerate") {
  std::mt19937_64 gen(43);
  const Matrix a = oracle::random_attention(gen, 7);
  const auto s = compute_routing_stats(a, a, a - a);
  CHECK(s.degenerate);
  CHECK(s.frob == 0.0);
  CHECK(s.delta_entropy == 0.0);
  CHECK(s.spectral_ratio == 0.0);
  CHECK(s.locality == 0.0);
  CHECK(metric_defined(s, "frob"));
  CHECK(metric_defined(s, "d_entropy"));
  CHECK_FALSE(metric_defined(s, "rho"));
}

TEST_CASE("entropy change has the sign of the spread") {
  Matrix sharp = Matrix::Identity(5, 5);
  Matrix flat = Matrix::Zero(5, 5);
  for (int i = 0; i < 5; ++i) flat.row(i).head(i + 1).setConstant(1.0 / (i + 1));
  CHECK(compute_routing_stats(sharp, flat, flat - sharp).delta_entropy > 0.0);
  CHECK(compute_routing_stats(flat, sharp, sharp - flat).delta_entropy < 0.0);
}

TEST_CASE("routing stats input errors") {
  CHECK_THROWS_AS(compute_routing_stats(Matrix::Zero(3, 3), Matrix::Zero(3, 3), Matrix::Zero(2, 2)),
                  InvalidArgument);
  Matrix bad = Matrix::Zero(3, 3);
  bad(1, 0) = std::nan("");
  CHECK_THROWS_AS(compute_routing_stats(bad, Matrix::Zero(3, 3), Matrix::Zero(3, 3)), ValueError);
  CHECK_THROWS_AS(metric_value(RoutingStats{}, "bogus"), InvalidArgument);
}

TEST_CASE("aggregate and profile match direct means") {
  std::vector<InstanceStats> instances;
  std::mt19937_64 gen(44);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int p = 0; p < 5; ++p) {
    for (int l = 0; l < 3; ++l) {
      InstanceStats inst;
      inst.probe_id = "p" + std::to_string(p);
      inst.layer = l;
      inst.stats.frob = ud(gen);
      inst.stats.spectral_ratio = ud(gen);
      inst.stats.delta_entropy = ud(gen) - 0.5;
      inst.stats.degenerate = (p == 2 && l == 1);
      if (inst.stats.degenerate) inst.stats.frob = inst.stats.spectral_ratio = 0.0;
      instances.push_back(inst);
    }
  }
  const auto summary = aggregate_stats(instances);
  REQUIRE(summary.size() == kMetricNames.size());
  for (const auto& s : summary) {
    std::vector<double> xs;
    for (const auto& inst : instances) {
      if (metric_defined(inst.stats, s.metric)) xs.push_back(metric_value(inst.stats, s.metric));
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    CHECK(s.count == xs.size());
    CHECK(s.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(s.sd == doctest::Approx(std::sqrt(var / static_cast<double>(xs.size()))).epsilon(1e-13));
  }
  CHECK(summary[0].count == 15);  // frob keeps the degenerate instance
  CHECK(summary[1].count == 14);  // rho drops it

  const auto rows = layer_profile(instances, 3, "rho");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].relative_depth == 0.0);
  CHECK(rows[1].relative_depth == 0.5);
  CHECK(rows[2].relative_depth == 1.0);
  CHECK(rows[1].count == 4);
  double mean1 = 0.0;
  for (const auto& inst : instances) {
    if (inst.layer == 1 && !inst.stats.degenerate) mean1 += inst.stats.spectral_ratio / 4.0;
  }
  CHECK(rows[1].mean == doctest::Approx(mean1).epsilon(1e-14));
  CHECK_THROWS_AS(layer_profile(instances, 2, "rho"), InvalidArgument);
  CHECK_THROWS_AS(layer_profile(instances, 3, "nope"), InvalidArgument);
  CHECK(layer_profile(instances, 1 + 3, "frob")[3].count == 0);
}

TEST_CASE("pack-level statistics") {
  const auto family = generate_family(5, 2, 2, 3, 32);
  const auto probes = synthetic_probe_ids(4);
  SynthPackOptions options;
  options.noise_scale = 0.1;
  const Pack pack = generate_attnpack(family, probes, jittered_token_lengths(4, 10, 2, 6), options);
  const auto inst = collect_instance_stats(pack);
  REQUIRE(inst.size() == 4 * 2 * 2);
  CHECK(inst[5].probe_id == pack.manifest.probes[1].probe_id);
  CHECK(inst[5].layer == 0);
  CHECK(inst[5].head == 1);
  for (const auto& i : inst) {
    CHECK(i.stats.frob > 0.0);
    CHECK(i.stats.spectral_ratio <= 1.0);
    CHECK(i.stats.locality <= 1.0);
  }
  const auto threaded = collect_instance_stats(pack, 3);
  for (std::size_t i = 0; i < inst.size(); ++i) CHECK(threaded[i].stats.frob == inst[i].stats.frob);
  CHECK(aggregate_stats(pack)[0].count == 16);
  CHECK(layer_profile(pack, "locality").size() == 2);

  std::ostringstream csv;
  write_instance_csv(csv, inst);
  CHECK(csv.str().rfind("probe_id,layer,head,frob,rho,r_eff,gini_col,gini_row,d_entropy,locality\n", 0) == 0);
  std::ostringstream summary;
  write_summary_csv(summary, aggregate_stats(inst));
  CHECK(summary.str().rfind("metric,count,mean,sd\nfrob,16,", 0) == 0);
}
