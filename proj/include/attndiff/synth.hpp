#pragma once

// Seeded synthetic "model families" that emit causal attention packs.
//
// A family owns, for every (layer, head), a pair of orthonormal position
// bases (receivers U, senders V, basis_len x rank) drawn heavy-tailed so
// each direction is carried by a few positions, per-direction weights and
// four scalars: content sharpness, locality decay, attention-sink bias on
// the first token and re-routing strength. For probe i the generator draws, from streams seeded with
// (family seed XOR i), a content field g and a conflict vector z. Each
// cell g(r, c) has its own stream, so a shorter sequence sees a crop of
// the same field. Then
//
//   origin logits     S(r, c) = sharpness * g(r, c) - locality * |r - c|
//                               + sink * [c == 0]
//   corrupted logits  S(r, c) + reroute * basis_len / 4 * sum_k w_k z_k U(r,k) V(c,k)
//
// with N(0, noise_scale^2) logit noise added to the corrupted side only,
// followed by a softmax over the causal support c <= r. Derived families perturb the bases and
// scalars but keep the seed, so they share g and z with their parent.
//
// All randomness comes from SplitMix64 (see rng.hpp).

#include <cstdint>
#include <string>
#include <vector>

#include "attndiff/container.hpp"
#include "attndiff/diffcore.hpp"
#include "attndiff/probeset.hpp"

namespace attndiff {

inline constexpr int kDefaultBasisLen = 128;
inline constexpr double kRerouteGainPerBasis = 0.25;

struct HeadRouting {
  Matrix receivers;         // basis_len x rank, orthonormal columns
  Matrix senders;           // basis_len x rank, orthonormal columns
  Eigen::VectorXd weights;  // rank
  double sharpness = 1.0;
  double locality = 0.0;
  double reroute = 1.0;
  double sink = 0.0;
};

struct Derivation {
  double perturbation = 0.0;
  std::uint64_t seed = 0;
};

struct SynthFamily {
  std::uint64_t seed = 0;
  int layers = 0;
  int heads = 0;
  int rank = 0;
  int basis_len = kDefaultBasisLen;
  double noise_scale = 0.0;
  std::vector<Derivation> lineage;  // applied in order after generation
  std::vector<HeadRouting> routing; // index l * heads + h

  const HeadRouting& at(int layer, int head) const {
    return routing[static_cast<std::size_t>(layer) * heads + head];
  }
};

/// Deterministic per seed. basis_len is raised to rank when smaller.
SynthFamily generate_family(std::uint64_t seed, int layers, int heads, int rank,
                            int basis_len = kDefaultBasisLen);

/// A descendant: bases are perturbed by `perturbation`-scaled Gaussian
/// noise and re-orthonormalized; scalars and weights get multiplicative
/// jitter of the same relative size. The probe stream seed is inherited.
SynthFamily derive_family(const SynthFamily& parent, double perturbation,
                          std::uint64_t seed);

struct TokenLengths {
  int origin = 0;
  int corrupted = 0;
};

/// origin = base +/- jitter; about one probe in four gets a corrupted
/// length that differs by 1 or 2 tokens. All lengths are >= 2.
std::vector<TokenLengths> jittered_token_lengths(std::size_t count, int base,
                                                 int jitter, std::uint64_t seed);

struct SynthPackOptions {
  double noise_scale = 0.0;
  std::uint64_t noise_seed = 0;
  bool corrupted_equals_origin = false;  // also forces Ñ = N
  std::string model_id = "synthetic";
};

/// One attention pack over `probes` (in their sorted order). lengths[i]
/// gives N and Ñ for probe i; every length must be in [2, basis_len].
Pack generate_attnpack(const SynthFamily& family, const ProbeSet& probes,
                       const std::vector<TokenLengths>& lengths,
                       const SynthPackOptions& options);

/// Placeholder probe set (ids synth-000..., six domains round-robin) for
/// packs that do not need real prompt text.
ProbeSet synthetic_probe_ids(std::size_t count);

/// The recipe (seed, shape, lineage) is enough to rebuild a family.
std::string family_to_json(const SynthFamily& family);
SynthFamily family_from_json(std::string_view text);

}  // namespace attndiff
