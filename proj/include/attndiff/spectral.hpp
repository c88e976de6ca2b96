#pragma once

// Spectral descriptors of differential attention and fingerprint assembly.

#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "attndiff/container.hpp"
#include "attndiff/diffcore.hpp"

namespace attndiff {

inline constexpr int kDefaultRank = 3;

struct SpectralDescriptor {
  std::vector<double> sigmas;  // descending, non-negative, size K
  int layer = 0;
  int head = 0;
  bool padded = false;  // K exceeded the matrix side; tail is zero
};

/// All singular values of `matrix`, descending. Householder
/// bidiagonalization followed by implicit-shift QR on the bidiagonal
/// (values only). Throws ValueError on non-finite input.
Eigen::VectorXd singular_values(const Matrix& matrix);

inline constexpr double kLanczosTolerance = 1e-10;

/// The `count` largest singular values, descending (fewer if the matrix is
/// smaller). Golub-Kahan-Lanczos bidiagonalization from a fixed start
/// vector, reorthogonalizing the right vectors; stops once every wanted
/// Ritz value has error bound min(r, r^2 / gap) <= kLanczosTolerance *
/// sigma_1, with r the Ritz residual and gap taken from the Ritz values.
/// Small matrices and Lanczos breakdown go through singular_values().
Eigen::VectorXd leading_singular_values(const Matrix& matrix, int count);

/// The K largest singular values of delta, zero-padded (and flagged) when
/// K exceeds the matrix side.
SpectralDescriptor topk_singular_values(const DiffMatrix& delta, int rank);

/// M x (L*H*K) fingerprint. Row i belongs to probe_ids[i]; column
/// ((l*H + h)*K + k) holds the k-th singular value at layer l, head h.
struct FingerprintMatrix {
  Matrix values;
  int layers = 0;
  int heads = 0;
  int rank = 0;
  std::vector<std::string> probe_ids;
  std::vector<std::string> domains;
  std::string model_id;
  std::int64_t created_unix = 0;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index width() const { return values.cols(); }
  Eigen::Index column(int layer, int head, int k) const {
    return (static_cast<Eigen::Index>(layer) * heads + head) * rank + k;
  }
};

struct FingerprintBuild {
  FingerprintMatrix matrix;
  std::vector<Diagnostic> warnings;  // one per padded descriptor
};

/// Differential attention -> top-K singular values for every probe, layer
/// and head of an attention pack. Rows follow the pack's probe order.
/// Throws ValidationError if the pack does not validate cleanly.
/// The result does not depend on `threads`.
FingerprintBuild build_fingerprint_matrix(const Pack& pack, int rank,
                                          int threads = 1);

/// Descriptors of one probe: result[l*H + h].
std::vector<SpectralDescriptor> probe_descriptors(const Pack& pack,
                                                  std::size_t probe_index,
                                                  int rank);

/// L x H heatmap, E(l,h) = l2 norm of the descriptor at (l,h).
Matrix heatmap_energy(const Pack& pack, const std::string& probe_id, int rank);
Matrix heatmap_energy(const FingerprintMatrix& fingerprint,
                      const std::string& probe_id);

Pack fingerprint_to_pack(const FingerprintMatrix& fingerprint);
FingerprintMatrix fingerprint_from_pack(const Pack& pack);
FingerprintMatrix load_fingerprint(const std::filesystem::path& path);

/// Header `probe_id,f_0,...,f_{D-1}`, one row per probe.
void write_fingerprint_csv(std::ostream& out, const FingerprintMatrix& fingerprint);

}  // namespace attndiff
