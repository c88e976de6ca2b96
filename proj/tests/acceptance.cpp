// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any
// failure. Seeds are fixed so a run is reproducible.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "attndiff/container.hpp"
#include "attndiff/diffcore.hpp"
#include "attndiff/rng.hpp"
#include "attndiff/routing_stats.hpp"
#include "attndiff/similarity.hpp"
#include "attndiff/spectral.hpp"
#include "attndiff/synth.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace attndiff;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
  std::printf("%s %-22s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

Matrix permute_rows(const Matrix& x, const std::vector<int>& p) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) y.row(i) = x.row(p[static_cast<std::size_t>(i)]);
  return y;
}

Matrix permute_cols(const Matrix& x, const std::vector<int>& p) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) y.col(j) = x.col(p[static_cast<std::size_t>(j)]);
  return y;
}

std::vector<int> permutation(std::mt19937_64& gen, Eigen::Index n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), gen);
  return p;
}

void prop1_invariance() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  double worst = 0.0;
  for (int pair = 0; pair < 200; ++pair) {
    const Eigen::Index d = pair % 2 == 0 ? 48 : 300;
    const Matrix f = oracle::random_matrix(gen, 60, d).cwiseAbs();
    const Matrix g = (f + oracle::random_matrix(gen, 60, d)).cwiseAbs();
    const double base = cka(f, g);

    const auto rows = permutation(gen, 60);
    worst = std::max(worst, std::abs(cka(permute_rows(f, rows), permute_rows(g, rows)) - base));
    worst = std::max(worst, std::abs(cka(permute_cols(f, permutation(gen, d)),
                                         permute_cols(g, permutation(gen, d))) - base));
    worst = std::max(worst, std::abs(cka(f * oracle::random_orthogonal(gen, d),
                                         g * oracle::random_orthogonal(gen, d)) - base));
    worst = std::max(worst, std::abs(cka(scale(gen) * f, scale(gen) * g) - base));
  }
  const double t = seconds_since(t0);
  report(worst <= 1e-10 && t < 30.0, "prop1-invariance",
         fmt("max drift %.3g over 200 pairs x 4 transforms (tol 1e-10), %.2f s (limit 30 s)",
             worst, t));
}

void prop2_bound() {
  std::mt19937_64 gen(102);
  std::uniform_real_distribution<double> log_scale(-5.0, 0.5);
  std::uniform_int_distribution<int> rows(3, 60), cols(1, 64);
  int trials = 0, violations = 0, attempts = 0;
  double worst_margin = -1.0;
  while (trials < 1000 && attempts < 100000) {
    ++attempts;
    const Eigen::Index m = rows(gen), d = cols(gen);
    const Matrix f = oracle::random_matrix(gen, m, d);
    Matrix g = f + std::pow(10.0, log_scale(gen)) * oracle::random_matrix(gen, m, d);
    if (attempts % 4 == 0) g = oracle::random_matrix(gen, m, cols(gen));  // unrelated widths too
    BoundCheck b;
    try {
      b = epsilon_and_bound(f, g);
    } catch (const DegenerateError&) {
      continue;
    }
    if (!b.applicable) continue;
    ++trials;
    worst_margin = std::max(worst_margin, b.one_minus_cka - b.bound_2eps2);
    if (!(b.one_minus_cka <= b.bound_2eps2 + kBoundSlack)) ++violations;
  }

  bool anchor_ok = false;
  std::string anchor = "fixture missing";
  std::ifstream in(std::string(ATTNDIFF_TEST_DATA_DIR) + "/anchor_grams.json");
  if (in) {
    const auto doc = nlohmann::json::parse(in);
    auto load = [](const nlohmann::json& rows_json) {
      Matrix out(static_cast<Eigen::Index>(rows_json.size()),
                 static_cast<Eigen::Index>(rows_json[0].size()));
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = rows_json[i][j].get<double>();
      }
      return out;
    };
    const auto b = epsilon_and_bound_from_grams(load(doc["victim"]), load(doc["suspect"]));
    auto r4 = [](double x) { return std::round(x * 1e4) / 1e4; };
    anchor_ok = r4(b.cka) == 0.9985 && r4(b.epsilon) == 0.0777 &&
                r4(b.one_minus_cka) == 0.0015 && r4(b.bound_2eps2) == 0.0121 && b.holds;
    anchor = fmt("anchor CKA %.4f eps %.4f: %.4f <= %.4f", b.cka, b.epsilon, b.one_minus_cka,
                 b.bound_2eps2);
  }
  report(trials == 1000 && violations == 0 && anchor_ok, "prop2-bound",
         std::to_string(violations) + " violations in " + std::to_string(trials) +
             " trials with eps < 1 (max 1-CKA-2eps^2 " + fmt("%.3g", worst_margin) + "); " +
             anchor);
}

void gram_chain() {
  std::mt19937_64 gen(103);
  std::uniform_int_distribution<int> rows(2, 40), cols(1, 40);
  std::uniform_real_distribution<double> log_scale(-4.0, 1.0);
  int violations = 0;
  double worst_first = 0.0, worst_second = 0.0;
  for (int i = 0; i < 500; ++i) {
    const Eigen::Index m = rows(gen), d = cols(gen);
    const Matrix f = oracle::random_matrix(gen, m, d);
    const Matrix fp = f + std::pow(10.0, log_scale(gen)) * oracle::random_matrix(gen, m, d);
    const Matrix k = f * f.transpose(), kp = fp * fp.transpose();
    const double gram_gap = (k - kp).norm();
    const double rhs = (f - fp).norm() * (f.norm() + fp.norm());
    const double centered_gap = (centered_gram(f) - centered_gram(fp)).norm();
    // Relative slack for rounding in the products only.
    if (gram_gap > rhs * (1.0 + 1e-12)) ++violations;
    if (centered_gap > gram_gap * (1.0 + 1e-12)) ++violations;
    worst_first = std::max(worst_first, gram_gap / rhs);
    worst_second = std::max(worst_second, centered_gap / gram_gap);
  }
  report(violations == 0, "gram-chain",
         std::to_string(violations) +
             fmt(" violations in 500 instances (max ratios %.4f and %.4f, both must be <= 1)",
                 worst_first, worst_second));
}

void pooling_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(104);
  long cases = 0, mismatches = 0;
  for (Eigen::Index a = 1; a <= 12; ++a) {
    for (Eigen::Index b = 1; b <= 12; ++b) {
      const Matrix x = oracle::random_matrix(gen, a, b);
      for (Eigen::Index m = 1; m <= a; ++m) {
        for (Eigen::Index n = 1; n <= b; ++n) {
          ++cases;
          if (adaptive_pool(x, m, n) != oracle::pool(x, m, n)) ++mismatches;
        }
      }
    }
  }
  const double t = seconds_since(t0);
  report(mismatches == 0 && t < 10.0, "pooling-oracle",
         std::to_string(mismatches) + " bitwise mismatches in " + std::to_string(cases) +
             fmt(" (a,b,m,n) cases, %.2f s (limit 10 s)", t));
}

void svd_oracle() {
  std::mt19937_64 gen(105);
  std::uniform_int_distribution<int> side(1, 20);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    Matrix a;
    const int r = side(gen);
    switch (i % 4) {
      case 0: a = oracle::random_matrix(gen, r, side(gen)); break;
      case 1: a = oracle::random_attention(gen, r) - oracle::random_attention(gen, r); break;
      case 2: a = oracle::random_matrix(gen, r, 2) * oracle::random_matrix(gen, 2, side(gen)); break;
      default: a = 1e-3 * oracle::random_matrix(gen, r, r); break;
    }
    const auto d = topk_singular_values(DiffMatrix{a, 0, 0, a.rows()}, 3);
    const auto want = oracle::top_singular_values(a, 3);
    const double scale = want[0] > 0.0 ? want[0] : 1.0;
    for (int k = 0; k < 3; ++k) {
      worst = std::max(worst, std::abs(d.sigmas[static_cast<std::size_t>(k)] - want[k]) / scale);
    }
  }
  report(worst <= 1e-8, "svd-oracle",
         fmt("max error %.3g relative to sigma_1 over 500 matrices up to 20x20, K=3 (tol 1e-8)",
             worst));
}

void routing_closed_forms() {
  double worst = 0.0;
  for (int m = 2; m <= 50; ++m) {
    worst = std::max(worst, std::abs(gini_coefficient(Eigen::VectorXd::Constant(m, 0.37))));
    Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(m);
    one_hot[m / 2] = 2.5;
    worst = std::max(worst, std::abs(gini_coefficient(one_hot) - (m - 1.0) / m));
  }
  std::mt19937_64 gen(106);
  for (Eigen::Index n : {2, 5, 12, 40}) {
    const Matrix a = oracle::random_attention(gen, n);
    const Matrix u = oracle::random_matrix(gen, n, 1), v = oracle::random_matrix(gen, n, 1);
    const Matrix rank_one = 0.05 * u * v.transpose();
    const auto s1 = compute_routing_stats(a, a + rank_one, rank_one);
    worst = std::max({worst, std::abs(s1.spectral_ratio - 1.0), std::abs(s1.effective_rank - 1.0)});
    const Matrix diag = oracle::random_matrix(gen, n, 1).asDiagonal();
    const auto s2 = compute_routing_stats(a, a + diag, diag);
    worst = std::max(worst, std::abs(s2.locality - 1.0));
  }
  report(worst <= 1e-12, "routing-closed-forms",
         fmt("max error %.3g (Gini uniform/one-hot m=2..50, rank-1 rho and r_eff, diagonal "
             "locality; tol 1e-12)",
             worst));
}

void lineage_separation() {
  const auto t0 = Clock::now();
  constexpr int kTrials = 100;
  const auto probes = synthetic_probe_ids(60);
  struct Draw {
    SynthFamily family;
    std::vector<TokenLengths> lengths;
    Matrix fingerprint;
  };
  auto fingerprint_of = [&](const SynthFamily& f, const std::vector<TokenLengths>& lengths,
                            std::uint64_t noise_seed) {
    SynthPackOptions o;
    o.noise_scale = 0.01;
    o.noise_seed = noise_seed;
    return build_fingerprint_matrix(generate_attnpack(f, probes, lengths, o), 3, 1).matrix.values;
  };
  auto independent = [&](int t) {
    const std::uint64_t seed = derive_seed(2024, static_cast<std::uint64_t>(t));
    Draw d{generate_family(seed, 8, 8, 3), jittered_token_lengths(60, 40, 3, seed), {}};
    d.fingerprint = fingerprint_of(d.family, d.lengths, derive_seed(seed, 1));
    return d;
  };
  // Trial t compares victim t with its derivative and with victim t+1, so
  // each trial costs two new packs.
  Draw victim = independent(0);
  double same_sum = 0.0, other_sum = 0.0;
  int wins = 0;
  for (int t = 0; t < kTrials; ++t) {
    const auto child = derive_family(victim.family, 0.05, derive_seed(7, static_cast<std::uint64_t>(t)));
    const Matrix derived =
        fingerprint_of(child, victim.lengths, derive_seed(9, static_cast<std::uint64_t>(t)));
    Draw next = independent(t + 1);
    const double same = cka(victim.fingerprint, derived);
    const double other = cka(victim.fingerprint, next.fingerprint);
    same_sum += same;
    other_sum += other;
    wins += same > other ? 1 : 0;
    victim = std::move(next);
  }
  const double t = seconds_since(t0);
  const double gap = (same_sum - other_sum) / kTrials;
  report(gap >= 0.3 && wins >= 95 && t < 60.0, "lineage-separation",
         fmt("mean CKA same %.4f vs independent %.4f (gap %.4f, need >= 0.3)", same_sum / kTrials,
             other_sum / kTrials, gap) +
             ", wins " + std::to_string(wins) + "/100 (need >= 95)" +
             fmt(", %.1f s (limit 60 s)", t));
}

void container_round_trip() {
  std::mt19937_64 gen(108);
  std::uniform_int_distribution<int> small(1, 4), tokens(1, 12);
  std::uniform_real_distribution<float> ud(0.0f, 1.0f);
  int identical = 0;
  for (int i = 0; i < 100; ++i) {
    PackManifest m;
    m.kind = i % 3 == 0 ? PackKind::fingerprint : PackKind::attention;
    m.model_id = "random-" + std::to_string(i);
    m.created_unix = static_cast<std::int64_t>(gen() >> 33);
    m.layers = static_cast<std::uint32_t>(small(gen));
    m.heads = static_cast<std::uint32_t>(small(gen));
    if (m.kind == PackKind::fingerprint) m.rank = static_cast<std::uint32_t>(small(gen));
    if (i % 2 == 0) m.extra["note"] = "trial " + std::to_string(i);
    const int probes = small(gen);
    for (int p = 0; p < probes; ++p) {
      ProbeTensorRef ref;
      ref.probe_id = "p" + std::to_string(1000 + p);
      ref.domain = "Code";
      if (m.kind == PackKind::attention) {
        ref.origin_tokens = static_cast<std::uint64_t>(tokens(gen));
        ref.corrupted_tokens = static_cast<std::uint64_t>(tokens(gen));
      }
      m.probes.push_back(ref);
    }
    if (m.kind == PackKind::attention) assign_contiguous_offsets(m);
    std::vector<float> payload(m.declared_elements());
    for (auto& v : payload) v = ud(gen);
    try {
      const auto first = write_pack(m, payload);
      const Pack back = read_pack(first);
      if (write_pack(back.manifest, back.payload) == first) ++identical;
    } catch (const Error&) {
    }
  }
  report(identical == 100, "container-round-trip",
         std::to_string(identical) + "/100 randomized packs byte-identical after write-read-write");
}

void fingerprint_compare_budget() {
  const auto probes = synthetic_probe_ids(60);
  const auto parent = generate_family(4242, 8, 8, 3);
  const auto child = derive_family(parent, 0.05, 1);
  const auto lengths = jittered_token_lengths(60, 40, 3, 4242);
  SynthPackOptions o;
  o.noise_scale = 0.01;
  const Pack victim_pack = generate_attnpack(parent, probes, lengths, o);
  o.noise_seed = 1;
  const Pack suspect_pack = generate_attnpack(child, probes, lengths, o);
  const auto victim_bytes = write_pack(victim_pack.manifest, victim_pack.payload);
  const auto suspect_bytes = write_pack(suspect_pack.manifest, suspect_pack.payload);

  // Bytes in, report out: parse, validate, fingerprint, serialize, compare.
  auto full_run = [&](int threads) {
    auto fpk = [&](const std::vector<std::uint8_t>& bytes) {
      const auto fp = build_fingerprint_matrix(read_pack(bytes), 3, threads).matrix;
      const Pack p = fingerprint_to_pack(fp);
      return fingerprint_from_pack(read_pack(write_pack(p.manifest, p.payload)));
    };
    const auto v = fpk(victim_bytes);
    const auto s = fpk(suspect_bytes);
    return std::pair{v.values, report_to_json(compare_report(v, s))};
  };
  const auto t0 = Clock::now();
  const auto single = full_run(1);
  const double t = seconds_since(t0);
  const auto multi = full_run(4);
  const bool same = single.first == multi.first && single.second == multi.second;
  const double score = nlohmann::json::parse(single.second)["cka"].get<double>();
  report(t < 10.0 && same, "fingerprint-compare",
         fmt("2 packs x 60 probes, L=8 H=8 N~40 K=3: %.2f s single-threaded (limit 10 s), "
             "CKA %.4f; ",
             t, score) +
             (same ? "threads=1 and threads=4 bitwise identical" : "threads change the result"));
}

}  // namespace

int main() {
  prop1_invariance();
  prop2_bound();
  gram_chain();
  pooling_oracle();
  svd_oracle();
  routing_closed_forms();
  lineage_separation();
  container_round_trip();
  fingerprint_compare_budget();
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
