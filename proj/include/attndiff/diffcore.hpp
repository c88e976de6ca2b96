#pragma once

// Causal masking, resolution alignment and differential attention.

#include <cmath>

#include <Eigen/Core>

#include "attndiff/error.hpp"

namespace attndiff {

using Matrix = Eigen::MatrixXd;

/// Vectorized stand-in for Matrix::allFinite(), which is slow on small
/// matrices.
inline bool all_finite(const Matrix& m) {
  return m.size() == 0 || std::isfinite(m.cwiseAbs().maxCoeff<Eigen::PropagateNaN>());
}

struct AttnMatrix {
  Matrix values;  // N x N, strictly upper triangle zero
  int layer = 0;
  int head = 0;
};

struct DiffMatrix {
  Matrix values;  // N* x N*, corrupted minus origin
  int layer = 0;
  int head = 0;
  Eigen::Index n_star = 0;
};

/// Zeroes every (i, j) with j > i. Throws InvalidArgument on a non-square
/// input and ValueError on non-finite entries.
AttnMatrix mask_causal(const Matrix& matrix, int layer = 0, int head = 0);
/// Same, reusing the storage of `matrix`.
AttnMatrix mask_causal(Matrix&& matrix, int layer = 0, int head = 0);

/// 2D adaptive average pooling with floor bin boundaries:
///   I_u = { r : floor(u*a/m) <= r < floor((u+1)*a/m) }
/// and likewise J_v over columns; Y(u,v) is the mean of X over I_u x J_v.
/// Requires 1 <= m <= a and 1 <= n <= b; resolution never increases.
Matrix adaptive_pool(const Matrix& input, Eigen::Index rows, Eigen::Index cols);

/// Pools both maps to N* = min(N, Ñ) and returns pooled(corrupted) -
/// pooled(origin). The pooled maps are not re-masked or renormalized.
DiffMatrix diff_attention(const AttnMatrix& origin, const AttnMatrix& corrupted);

/// Both pooled maps and their difference, for callers that also need the
/// aligned A and Ã (routing statistics).
struct AlignedPair {
  Matrix origin;
  Matrix corrupted;
  DiffMatrix delta;
};
AlignedPair align_pair(const AttnMatrix& origin, const AttnMatrix& corrupted);

}  // namespace attndiff
