#include "attndiff/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/QR>

#include "attndiff/format.hpp"
#include "attndiff/rng.hpp"
#include "json.hpp"

namespace attndiff {

namespace {

constexpr std::uint64_t kFamilyTag = 0x66616D696C79ULL;     // "family"
constexpr std::uint64_t kDeriveTag = 0x646572697665ULL;     // "derive"
constexpr std::uint64_t kContentTag = 0x636F6E74656E74ULL;  // "content"
constexpr std::uint64_t kNoiseTag = 0x6E6F697365ULL;        // "noise"
constexpr std::uint64_t kLengthTag = 0x6C656E677468ULL;     // "length"

Matrix gaussian(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  // Row-major fill order so the stream layout does not depend on storage.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

// Content field cell (r, c) of a probe: keyed by position so that
// changing the sequence length crops the field instead of redrawing it.
Matrix content_field(std::uint64_t seed, int n) {
  Matrix g(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c <= r; ++c) {
      SplitMix64 cell(derive_seed(seed, (static_cast<std::uint64_t>(r) << 32) | c));
      g(r, c) = cell.normal();
    }
    for (int c = r + 1; c < n; ++c) g(r, c) = 0.0;  // never reaches the softmax
  }
  return g;
}

// Heavy-tailed draws (signed fifth power of a normal) so each routing
// direction is dominated by a handful of positions.
Matrix spiky(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m = gaussian(rng, rows, cols);
  return m.unaryExpr([](double x) { return x * x * x * x * x; });
}

Matrix orthonormalize(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  // Fix column signs so Q is a deterministic function of m.
  const Matrix r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  }
  return q;
}

void fill_attention(const Matrix& logits, float* out) {
  const Eigen::Index n = logits.rows();
  Eigen::ArrayXd row(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index len = r + 1;
    auto head = row.head(len);
    head = logits.row(r).head(len).transpose().array();
    head = (head - head.maxCoeff()).exp();
    head /= head.sum();
    float* dst = out + r * n;
    for (Eigen::Index c = 0; c < len; ++c) dst[c] = static_cast<float>(head[c]);
    for (Eigen::Index c = len; c < n; ++c) dst[c] = 0.0f;
  }
}

void add_noise(Matrix& logits, double scale, std::uint64_t seed) {
  if (scale == 0.0) return;
  SplitMix64 rng(seed);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) logits(r, c) += scale * rng.normal();
  }
}

void apply_derivation(SynthFamily& family, const Derivation& d) {
  SplitMix64 rng(derive_seed(d.seed, kDeriveTag));
  const double p = d.perturbation;
  auto jitter = [&](double v) { return v * std::max(0.05, 1.0 + p * rng.normal()); };
  const double basis_scale = p / std::sqrt(static_cast<double>(family.basis_len));
  for (auto& head : family.routing) {
    head.receivers = orthonormalize(
        head.receivers + basis_scale * gaussian(rng, family.basis_len, family.rank));
    head.senders = orthonormalize(
        head.senders + basis_scale * gaussian(rng, family.basis_len, family.rank));
    for (Eigen::Index k = 0; k < head.weights.size(); ++k) head.weights[k] = jitter(head.weights[k]);
    head.sharpness = jitter(head.sharpness);
    head.locality = jitter(head.locality);
    head.reroute = jitter(head.reroute);
    head.sink = jitter(head.sink);
  }
  family.lineage.push_back(d);
}

}  // namespace

SynthFamily generate_family(std::uint64_t seed, int layers, int heads, int rank,
                            int basis_len) {
  if (layers < 1 || heads < 1 || rank < 1) {
    throw InvalidArgument("invalid family shape", "layers, heads and rank must be >= 1");
  }
  SynthFamily f;
  f.seed = seed;
  f.layers = layers;
  f.heads = heads;
  f.rank = rank;
  f.basis_len = std::max(basis_len, rank);
  SplitMix64 rng(derive_seed(seed, kFamilyTag));
  f.routing.reserve(static_cast<std::size_t>(layers) * heads);
  for (int i = 0; i < layers * heads; ++i) {
    HeadRouting h;
    h.receivers = orthonormalize(spiky(rng, f.basis_len, rank));
    h.senders = orthonormalize(spiky(rng, f.basis_len, rank));
    h.weights.resize(rank);
    for (int k = 0; k < rank; ++k) h.weights[k] = rng.uniform(0.5, 1.5);
    h.sharpness = rng.uniform(0.5, 2.0);
    h.locality = rng.uniform(0.0, 0.5);
    h.reroute = rng.uniform(1.0, 3.0);
    h.sink = rng.uniform(1.0, 4.0);
    f.routing.push_back(std::move(h));
  }
  return f;
}

SynthFamily derive_family(const SynthFamily& parent, double perturbation,
                          std::uint64_t seed) {
  if (!(perturbation >= 0.0) || !std::isfinite(perturbation)) {
    throw InvalidArgument("invalid perturbation", std::to_string(perturbation));
  }
  SynthFamily child = parent;
  apply_derivation(child, Derivation{perturbation, seed});
  return child;
}

std::vector<TokenLengths> jittered_token_lengths(std::size_t count, int base,
                                                 int jitter, std::uint64_t seed) {
  if (base < 2 || jitter < 0) {
    throw InvalidArgument("invalid token lengths", "base must be >= 2 and jitter >= 0");
  }
  SplitMix64 rng(derive_seed(seed, kLengthTag));
  std::vector<TokenLengths> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int offset = static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(jitter) + 1)) - jitter;
    TokenLengths t;
    t.origin = std::max(2, base + offset);
    t.corrupted = t.origin;
    if (rng.below(4) == 0) {
      const int delta = 1 + static_cast<int>(rng.below(2));
      t.corrupted = std::max(2, t.origin + (rng.below(2) == 0 ? -delta : delta));
    }
    out.push_back(t);
  }
  return out;
}

Pack generate_attnpack(const SynthFamily& family, const ProbeSet& probes,
                       const std::vector<TokenLengths>& lengths,
                       const SynthPackOptions& options) {
  if (lengths.size() != probes.probes.size()) {
    throw InvalidArgument("length count mismatch",
                          std::to_string(lengths.size()) + " lengths for " +
                              std::to_string(probes.probes.size()) + " probes");
  }
  for (const auto& t : lengths) {
    if (t.origin < 2 || t.corrupted < 2 || t.origin > family.basis_len ||
        t.corrupted > family.basis_len) {
      throw InvalidArgument("invalid token lengths",
                            "lengths must lie in [2, " + std::to_string(family.basis_len) + "]");
    }
  }
  if (!(options.noise_scale >= 0.0)) {
    throw InvalidArgument("invalid noise scale", std::to_string(options.noise_scale));
  }

  Pack pack;
  auto& m = pack.manifest;
  m.kind = PackKind::attention;
  m.model_id = options.model_id;
  m.layers = static_cast<std::uint32_t>(family.layers);
  m.heads = static_cast<std::uint32_t>(family.heads);
  m.extra["generator"] = "synth";
  m.extra["family_seed"] = std::to_string(family.seed);
  m.extra["noise_scale"] = format_double(options.noise_scale);
  for (std::size_t i = 0; i < probes.probes.size(); ++i) {
    ProbeTensorRef ref;
    ref.probe_id = probes.probes[i].id;
    ref.domain = probes.probes[i].domain;
    ref.origin_tokens = static_cast<std::uint64_t>(lengths[i].origin);
    ref.corrupted_tokens = static_cast<std::uint64_t>(
        options.corrupted_equals_origin ? lengths[i].origin : lengths[i].corrupted);
    m.probes.push_back(std::move(ref));
  }
  pack.payload.assign(assign_contiguous_offsets(m), 0.0f);

  const double gain = kRerouteGainPerBasis * family.basis_len;
  for (std::size_t i = 0; i < probes.probes.size(); ++i) {
    const std::uint64_t probe_seed = family.seed ^ static_cast<std::uint64_t>(i);
    SplitMix64 content(derive_seed(probe_seed, kContentTag));
    const int n_origin = lengths[i].origin;
    const int n_corrupted = options.corrupted_equals_origin ? n_origin : lengths[i].corrupted;
    const int n_max = std::max(n_origin, n_corrupted);
    const Matrix field = content_field(derive_seed(probe_seed, kContentTag + 1), n_max);
    Eigen::VectorXd conflict(family.rank);
    for (int k = 0; k < family.rank; ++k) conflict[k] = content.normal();

    const auto& ref = m.probes[i];
    Matrix origin, corrupted;
    for (int l = 0; l < family.layers; ++l) {
      for (int h = 0; h < family.heads; ++h) {
        const auto& head = family.at(l, h);
        // Only the causal lower triangle is ever read.
        auto base_logits = [&](Matrix& s, int n) {
          s.resize(n, n);
          for (int c = 0; c < n; ++c) {
            for (int r = c; r < n; ++r) {
              s(r, c) = head.sharpness * field(r, c) - head.locality * (r - c);
            }
          }
          s.col(0).array() += head.sink;
        };
        const std::uint64_t head_tag = static_cast<std::uint64_t>(l) * family.heads + h;
        const std::uint64_t noise_base =
            derive_seed(derive_seed(probe_seed, kNoiseTag ^ options.noise_seed), head_tag);

        base_logits(origin, n_origin);
        if (options.corrupted_equals_origin) {
          corrupted = origin;
        } else {
          base_logits(corrupted, n_corrupted);
          const Eigen::VectorXd mix = (head.reroute * gain) * head.weights.cwiseProduct(conflict);
          corrupted.triangularView<Eigen::Lower>() +=
              head.receivers.topRows(n_corrupted) * mix.asDiagonal() *
              head.senders.topRows(n_corrupted).transpose();
          add_noise(corrupted, options.noise_scale, noise_base);
        }

        const std::uint64_t slot = std::uint64_t(l) * family.heads + std::uint64_t(h);
        fill_attention(origin, pack.payload.data() + ref.origin_offset +
                                   slot * ref.origin_tokens * ref.origin_tokens);
        fill_attention(corrupted, pack.payload.data() + ref.corrupted_offset +
                                      slot * ref.corrupted_tokens * ref.corrupted_tokens);
      }
    }
  }
  return pack;
}

ProbeSet synthetic_probe_ids(std::size_t count) {
  ProbeSet set;
  const auto& domains = standard_domains();
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%04zu", i);
    ProbePair p;
    p.id = id;
    p.domain = domains[i % domains.size()];
    set.probes.push_back(std::move(p));
  }
  return set;
}

std::string family_to_json(const SynthFamily& f) {
  nlohmann::ordered_json j;
  j["kind"] = "synth-family";
  j["seed"] = f.seed;
  j["layers"] = f.layers;
  j["heads"] = f.heads;
  j["rank"] = f.rank;
  j["basis_len"] = f.basis_len;
  j["noise_scale"] = f.noise_scale;
  auto lineage = nlohmann::ordered_json::array();
  for (const auto& d : f.lineage) {
    lineage.push_back({{"perturbation", d.perturbation}, {"seed", d.seed}});
  }
  j["lineage"] = std::move(lineage);
  return j.dump(2) + "\n";
}

SynthFamily family_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("kind").get<std::string>() != "synth-family") {
      throw ValidationError("schema error", "not a synth-family document");
    }
    auto f = generate_family(j.at("seed").get<std::uint64_t>(), j.at("layers").get<int>(),
                             j.at("heads").get<int>(), j.at("rank").get<int>(),
                             j.value("basis_len", kDefaultBasisLen));
    f.noise_scale = j.value("noise_scale", 0.0);
    for (const auto& d : j.at("lineage")) {
      apply_derivation(f, Derivation{d.at("perturbation").get<double>(),
                                     d.at("seed").get<std::uint64_t>()});
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("schema error", e.what());
  }
}

}  // namespace attndiff
