#include "attndiff/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/SVD>
#include <lapacke.h>

#include "attndiff/format.hpp"
#include "attndiff/parallel.hpp"
#include "attndiff/rng.hpp"

namespace attndiff {

namespace {

std::size_t find_probe(const std::vector<std::string>& ids, const std::string& id) {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw ValidationError("unknown probe id", id);
  return static_cast<std::size_t>(it - ids.begin());
}

Matrix to_double(const TensorView& view) { return view.cast<double>(); }

}  // namespace

Eigen::VectorXd singular_values(const Matrix& matrix) {
  if (!all_finite(matrix)) throw ValueError("non-finite value", "singular_values input");
  if (matrix.rows() < matrix.cols()) return singular_values(matrix.transpose());
  const Eigen::Index n = matrix.cols();
  if (n == 0) return Eigen::VectorXd();
  if (n == 1) return Eigen::VectorXd::Constant(1, matrix.norm());

  Eigen::internal::UpperBidiagonalization<Matrix> bidiag(matrix);
  // Band storage: row 0 holds the superdiagonal shifted right by one,
  // row 1 the diagonal.
  const auto& band = bidiag.bidiagonal().coeffs();
  Eigen::VectorXd diag = band.row(1).transpose();
  Eigen::VectorXd super = band.row(0).tail(n - 1).transpose();
  const lapack_int info = LAPACKE_dbdsqr(
      LAPACK_COL_MAJOR, 'U', static_cast<lapack_int>(n), 0, 0, 0, diag.data(),
      super.data(), nullptr, 1, nullptr, 1, nullptr, 1);
  if (info != 0) {
    throw NumericalError("svd did not converge", "dbdsqr info " + std::to_string(info));
  }
  return diag;  // dbdsqr sorts in decreasing order
}

namespace {

// Singular values of the k x k upper bidiagonal with diagonal alpha and
// superdiagonal beta, largest first.
Eigen::VectorXd bidiagonal_values(const std::vector<double>& alpha,
                                  const std::vector<double>& beta, int k) {
  Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(alpha.data(), k);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(k);
  for (int i = 0; i + 1 < k; ++i) e[i] = beta[static_cast<std::size_t>(i)];
  const lapack_int info = LAPACKE_dbdsqr(LAPACK_COL_MAJOR, 'U', k, 0, 0, 0, d.data(), e.data(),
                                         nullptr, 1, nullptr, 1, nullptr, 1);
  if (info != 0) {
    throw NumericalError("svd did not converge", "dbdsqr info " + std::to_string(info));
  }
  return d;
}

// Implicit QL on the symmetric tridiagonal (d, e[0..n-2]); on return d holds
// the eigenvalues (unsorted) and z the last row of the eigenvector matrix.
// LAPACK carries too much per-call overhead at these sizes.
bool tridiagonal_eigen_last_row(int n, double* d, double* e, double* z) {
  for (int i = 0; i < n; ++i) z[i] = 0.0;
  z[n - 1] = 1.0;
  e[n - 1] = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m = l;
    do {
      for (m = l; m < n - 1; ++m) {
        if (std::abs(e[m]) <= eps * (std::abs(d[m]) + std::abs(d[m + 1]))) break;
      }
      if (m == l) break;
      if (iter++ == 60) return false;
      double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
      double r = std::sqrt(g * g + 1.0);
      g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? r : -r));
      double s = 1.0, c = 1.0, p = 0.0;
      int i = m - 1;
      for (; i >= l; --i) {
        double f = s * e[i];
        const double b = c * e[i];
        r = std::sqrt(f * f + g * g);
        e[i + 1] = r;
        if (r == 0.0) {
          d[i + 1] -= p;
          e[m] = 0.0;
          break;
        }
        s = f / r;
        c = g / r;
        g = d[i + 1] - p;
        r = (d[i] - g) * s + 2.0 * c * b;
        p = s * r;
        d[i + 1] = g + p;
        g = c * r - b;
        f = z[i + 1];
        z[i + 1] = s * z[i] + c * f;
        z[i] = c * z[i] - s * f;
      }
      if (r == 0.0 && i >= l) continue;
      d[l] -= p;
      e[l] = g;
      e[m] = 0.0;
    } while (m != l);
  }
  return true;
}

struct LanczosWorkspace {
  Matrix u_basis, v_basis;
  Eigen::VectorXd u, w, d, e, z;
  std::vector<double> alpha, beta;
  std::vector<int> order;
};

}  // namespace

Eigen::VectorXd leading_singular_values(const Matrix& matrix, int count) {
  if (count < 1) throw InvalidArgument("invalid rank", std::to_string(count));
  if (!all_finite(matrix)) throw ValueError("non-finite value", "singular value input");
  // Tall orientation: after min(m, n) steps the right Krylov space is
  // complete, so B_k holds the exact spectrum.
  if (matrix.rows() < matrix.cols()) return leading_singular_values(matrix.transpose(), count);
  const Eigen::Index m = matrix.rows(), n = matrix.cols();
  const Eigen::Index p = std::min(m, n);
  if (p <= 2 * static_cast<Eigen::Index>(count) + 4) {
    Eigen::VectorXd all = singular_values(matrix);
    return all.head(std::min<Eigen::Index>(count, all.size()));
  }

  const double scale = matrix.norm();
  if (scale == 0.0) return Eigen::VectorXd::Zero(count);
  const double breakdown = 1e-12 * scale;

  thread_local LanczosWorkspace ws;
  ws.v_basis.resize(n, p + 1);
  ws.u_basis.resize(m, p);
  ws.u.resize(m);
  ws.w.resize(n);
  ws.d.resize(p);
  ws.e.resize(p);
  ws.z.resize(p);
  ws.order.resize(static_cast<std::size_t>(p));
  auto& alpha = ws.alpha;
  auto& beta = ws.beta;
  alpha.clear();
  beta.clear();

  // Fixed pseudo-random start so results are reproducible.
  SplitMix64 rng(0x5EEDULL);
  for (Eigen::Index i = 0; i < n; ++i) ws.w[i] = rng.uniform(-1.0, 1.0);
  ws.v_basis.col(0) = ws.w / ws.w.norm();

  std::vector<double> theta(static_cast<std::size_t>(count) + 1);
  for (Eigen::Index j = 0; j < p; ++j) {
    // Only the right vectors are reorthogonalized; the top Ritz values
    // are insensitive to the slow loss of orthogonality in U.
    ws.u.noalias() = matrix * ws.v_basis.col(j);
    if (j > 0) ws.u -= beta.back() * ws.u_basis.col(j - 1);
    const double a = ws.u.norm();
    if (a <= breakdown) break;
    alpha.push_back(a);
    ws.u_basis.col(j) = ws.u / a;

    ws.w.noalias() = matrix.transpose() * ws.u_basis.col(j);
    ws.w -= a * ws.v_basis.col(j);
    const auto q = ws.v_basis.leftCols(j + 1);
    const double before = ws.w.norm();
    ws.w.noalias() -= q * (q.transpose() * ws.w);
    // Second pass when the first removed most of w (Kahan-Parlett).
    if (ws.w.norm() < 0.7 * before) ws.w.noalias() -= q * (q.transpose() * ws.w);
    const double b = ws.w.norm();
    const int k = static_cast<int>(j + 1);
    if (k == p) return bidiagonal_values(alpha, beta, k).head(count);
    if (b <= breakdown) break;  // invariant subspace; let the dense route decide
    beta.push_back(b);
    ws.v_basis.col(j + 1) = ws.w / b;

    if (k < count + 5 || (k - count - 5) % 2 != 0) continue;
    // Ritz pairs from T = B B^T (scaled to unit norm). The residual of
    // theta_i is r = beta_k |last component of left vector i| and the
    // error is at most min(r, r^2 / gap).
    for (int i = 0; i < k; ++i) {
      const double ai = alpha[i] / scale;
      const double bi = i + 1 < k ? beta[i] / scale : 0.0;
      ws.d[i] = ai * ai + bi * bi;
      ws.e[i] = i + 1 < k ? bi * alpha[i + 1] / scale : 0.0;
    }
    if (!tridiagonal_eigen_last_row(k, ws.d.data(), ws.e.data(), ws.z.data())) break;
    std::iota(ws.order.begin(), ws.order.begin() + k, 0);
    std::partial_sort(ws.order.begin(), ws.order.begin() + count + 1, ws.order.begin() + k,
                      [&](int x, int y) { return ws.d[x] > ws.d[y]; });
    for (int i = 0; i <= count; ++i) theta[i] = std::sqrt(std::max(ws.d[ws.order[i]], 0.0)) * scale;
    bool converged = true;
    for (int i = 0; i < count && converged; ++i) {
      const double r = b * std::abs(ws.z[ws.order[i]]);
      double gap = std::numeric_limits<double>::infinity();
      if (i > 0) gap = theta[i - 1] - theta[i];
      gap = std::min(gap, theta[i] - theta[i + 1]);
      const double bound = gap > 0.0 ? std::min(r, r * r / gap) : r;
      converged = bound <= kLanczosTolerance * theta[0];
    }
    if (!converged) continue;
    // Squaring costs relative accuracy on small values; recompute those
    // from B_k directly.
    if (theta[count - 1] < 1e-3 * theta[0]) return bidiagonal_values(alpha, beta, k).head(count);
    return Eigen::Map<const Eigen::VectorXd>(theta.data(), count);
  }
  Eigen::VectorXd all = singular_values(matrix);
  return all.head(count);
}

SpectralDescriptor topk_singular_values(const DiffMatrix& delta, int rank) {
  if (rank < 1) throw InvalidArgument("invalid rank", std::to_string(rank));
  const Eigen::VectorXd sv = leading_singular_values(delta.values, rank);
  SpectralDescriptor out;
  out.layer = delta.layer;
  out.head = delta.head;
  out.sigmas.assign(static_cast<std::size_t>(rank), 0.0);
  const auto available = std::min<Eigen::Index>(rank, sv.size());
  for (Eigen::Index k = 0; k < available; ++k) out.sigmas[k] = sv[k];
  out.padded = sv.size() < rank;
  return out;
}

std::vector<SpectralDescriptor> probe_descriptors(const Pack& pack,
                                                  std::size_t probe_index,
                                                  int rank) {
  const auto& m = pack.manifest;
  std::vector<SpectralDescriptor> out;
  out.reserve(std::size_t{m.layers} * m.heads);
  for (std::uint32_t l = 0; l < m.layers; ++l) {
    for (std::uint32_t h = 0; h < m.heads; ++h) {
      const auto origin = mask_causal(
          to_double(attention_view(pack, probe_index, Which::origin, l, h)),
          static_cast<int>(l), static_cast<int>(h));
      const auto corrupted = mask_causal(
          to_double(attention_view(pack, probe_index, Which::corrupted, l, h)),
          static_cast<int>(l), static_cast<int>(h));
      out.push_back(topk_singular_values(diff_attention(origin, corrupted), rank));
    }
  }
  return out;
}

FingerprintBuild build_fingerprint_matrix(const Pack& pack, int rank, int threads) {
  if (rank < 1) throw InvalidArgument("invalid rank", std::to_string(rank));
  const auto& m = pack.manifest;
  if (m.kind != PackKind::attention) {
    throw InvalidArgument("wrong pack kind", "fingerprinting needs an attention pack");
  }
  auto diags = validate_pack(pack);
  if (!diags.empty()) {
    const std::string first = diags.front().to_string();
    throw ValidationError("invalid pack", first, std::move(diags));
  }

  FingerprintBuild build;
  auto& fp = build.matrix;
  fp.layers = static_cast<int>(m.layers);
  fp.heads = static_cast<int>(m.heads);
  fp.rank = rank;
  fp.model_id = m.model_id;
  fp.created_unix = m.created_unix;
  const auto rows = static_cast<Eigen::Index>(m.probes.size());
  fp.values.resize(rows, Eigen::Index{m.layers} * m.heads * rank);
  for (const auto& ref : m.probes) {
    fp.probe_ids.push_back(ref.probe_id);
    fp.domains.push_back(ref.domain);
  }

  std::vector<std::vector<Diagnostic>> per_probe(m.probes.size());
  parallel_for(m.probes.size(), threads, [&](std::size_t i) {
    const auto descriptors = probe_descriptors(pack, i, rank);
    Eigen::Index col = 0;
    for (const auto& d : descriptors) {
      for (double s : d.sigmas) fp.values(static_cast<Eigen::Index>(i), col++) = s;
      if (d.padded) {
        per_probe[i].push_back(
            {"rank exceeds resolution",
             "probe " + m.probes[i].probe_id + " l=" + std::to_string(d.layer) +
                 " h=" + std::to_string(d.head) + ": K=" + std::to_string(rank) +
                 " > N*, padded with zeros"});
      }
    }
  });
  for (auto& w : per_probe) {
    build.warnings.insert(build.warnings.end(), w.begin(), w.end());
  }
  return build;
}

Matrix heatmap_energy(const Pack& pack, const std::string& probe_id, int rank) {
  std::vector<std::string> ids;
  for (const auto& ref : pack.manifest.probes) ids.push_back(ref.probe_id);
  const auto index = find_probe(ids, probe_id);
  const auto& m = pack.manifest;
  Matrix energy(m.layers, m.heads);
  for (const auto& d : probe_descriptors(pack, index, rank)) {
    double sq = 0.0;
    for (double s : d.sigmas) sq += s * s;
    energy(d.layer, d.head) = std::sqrt(sq);
  }
  return energy;
}

Matrix heatmap_energy(const FingerprintMatrix& fp, const std::string& probe_id) {
  const auto row = static_cast<Eigen::Index>(find_probe(fp.probe_ids, probe_id));
  Matrix energy(fp.layers, fp.heads);
  for (int l = 0; l < fp.layers; ++l) {
    for (int h = 0; h < fp.heads; ++h) {
      energy(l, h) = fp.values.row(row).segment(fp.column(l, h, 0), fp.rank).norm();
    }
  }
  return energy;
}

Pack fingerprint_to_pack(const FingerprintMatrix& fp) {
  Pack pack;
  auto& m = pack.manifest;
  m.kind = PackKind::fingerprint;
  m.model_id = fp.model_id;
  m.created_unix = fp.created_unix;
  m.layers = static_cast<std::uint32_t>(fp.layers);
  m.heads = static_cast<std::uint32_t>(fp.heads);
  m.rank = static_cast<std::uint32_t>(fp.rank);
  for (std::size_t i = 0; i < fp.probe_ids.size(); ++i) {
    ProbeTensorRef ref;
    ref.probe_id = fp.probe_ids[i];
    ref.domain = i < fp.domains.size() ? fp.domains[i] : std::string();
    m.probes.push_back(std::move(ref));
  }
  pack.payload.reserve(static_cast<std::size_t>(fp.values.size()));
  for (Eigen::Index r = 0; r < fp.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < fp.values.cols(); ++c) {
      pack.payload.push_back(static_cast<float>(fp.values(r, c)));
    }
  }
  return pack;
}

FingerprintMatrix fingerprint_from_pack(const Pack& pack) {
  const auto& m = pack.manifest;
  if (m.kind != PackKind::fingerprint) {
    throw InvalidArgument("wrong pack kind", "expected a fingerprint pack");
  }
  FingerprintMatrix fp;
  fp.layers = static_cast<int>(m.layers);
  fp.heads = static_cast<int>(m.heads);
  fp.rank = static_cast<int>(m.rank);
  fp.model_id = m.model_id;
  fp.created_unix = m.created_unix;
  const auto rows = static_cast<Eigen::Index>(m.probes.size());
  const auto width = static_cast<Eigen::Index>(m.fingerprint_width());
  fp.values.resize(rows, width);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < width; ++c) {
      fp.values(r, c) = pack.payload[static_cast<std::size_t>(r * width + c)];
    }
  }
  for (const auto& ref : m.probes) {
    fp.probe_ids.push_back(ref.probe_id);
    fp.domains.push_back(ref.domain);
  }
  return fp;
}

FingerprintMatrix load_fingerprint(const std::filesystem::path& path) {
  return fingerprint_from_pack(load_pack(path));
}

void write_fingerprint_csv(std::ostream& out, const FingerprintMatrix& fp) {
  out << "probe_id";
  for (Eigen::Index c = 0; c < fp.width(); ++c) out << ",f_" << c;
  out << '\n';
  for (Eigen::Index r = 0; r < fp.rows(); ++r) {
    out << fp.probe_ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < fp.width(); ++c) out << ',' << format_double(fp.values(r, c));
    out << '\n';
  }
}

}  // namespace attndiff
