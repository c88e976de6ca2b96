#include "attndiff/diffcore.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace attndiff {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// floor(u * a / m) for non-negative integers.
Eigen::Index bin_start(Eigen::Index u, Eigen::Index extent, Eigen::Index bins) {
  return (u * extent) / bins;
}

}  // namespace

AttnMatrix mask_causal(const Matrix& matrix, int layer, int head) {
  if (matrix.rows() != matrix.cols()) {
    throw InvalidArgument("non-square input", shape(matrix));
  }
  if (!all_finite(matrix)) throw ValueError("non-finite value", "attention matrix");
  AttnMatrix out{matrix.triangularView<Eigen::Lower>(), layer, head};
  return out;
}

AttnMatrix mask_causal(Matrix&& matrix, int layer, int head) {
  if (matrix.rows() != matrix.cols()) {
    throw InvalidArgument("non-square input", shape(matrix));
  }
  if (!all_finite(matrix)) throw ValueError("non-finite value", "attention matrix");
  matrix.triangularView<Eigen::StrictlyUpper>().setZero();
  return AttnMatrix{std::move(matrix), layer, head};
}

Matrix adaptive_pool(const Matrix& input, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index a = input.rows();
  const Eigen::Index b = input.cols();
  if (rows < 1 || cols < 1) {
    throw InvalidArgument("invalid target", std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (rows > a || cols > b) {
    throw InvalidArgument("target larger than input",
                          std::to_string(rows) + "x" + std::to_string(cols) +
                              " from " + shape(input));
  }
  // Unit bins: each mean is x / 1, so the copy is bitwise identical.
  if (rows == a && cols == b) return input;
  std::vector<Eigen::Index> col_edge(static_cast<std::size_t>(cols) + 1);
  for (Eigen::Index v = 0; v <= cols; ++v) col_edge[v] = bin_start(v, b, cols);
  Matrix out(rows, cols);
  for (Eigen::Index u = 0; u < rows; ++u) {
    const Eigen::Index r0 = bin_start(u, a, rows);
    const Eigen::Index r1 = bin_start(u + 1, a, rows);
    for (Eigen::Index v = 0; v < cols; ++v) {
      const Eigen::Index c0 = col_edge[v];
      const Eigen::Index c1 = col_edge[v + 1];
      double sum = 0.0;
      for (Eigen::Index r = r0; r < r1; ++r) {
        for (Eigen::Index c = c0; c < c1; ++c) sum += input(r, c);
      }
      out(u, v) = sum / static_cast<double>((r1 - r0) * (c1 - c0));
    }
  }
  return out;
}

namespace {

void require_same_slot(const AttnMatrix& origin, const AttnMatrix& corrupted) {
  if (origin.layer != corrupted.layer || origin.head != corrupted.head) {
    throw InvalidArgument("layer/head mismatch",
                          "origin (" + std::to_string(origin.layer) + "," +
                              std::to_string(origin.head) + ") vs corrupted (" +
                              std::to_string(corrupted.layer) + "," +
                              std::to_string(corrupted.head) + ")");
  }
}

}  // namespace

AlignedPair align_pair(const AttnMatrix& origin, const AttnMatrix& corrupted) {
  require_same_slot(origin, corrupted);
  const Eigen::Index n_star = std::min(origin.values.rows(), corrupted.values.rows());
  AlignedPair out;
  out.origin = adaptive_pool(origin.values, n_star, n_star);
  out.corrupted = adaptive_pool(corrupted.values, n_star, n_star);
  out.delta = DiffMatrix{out.corrupted - out.origin, origin.layer, origin.head, n_star};
  return out;
}

DiffMatrix diff_attention(const AttnMatrix& origin, const AttnMatrix& corrupted) {
  require_same_slot(origin, corrupted);
  const Eigen::Index n_star = std::min(origin.values.rows(), corrupted.values.rows());
  // The side already at N* pools to itself; skip the copy.
  Matrix pooled;
  const Matrix* o = &origin.values;
  const Matrix* c = &corrupted.values;
  if (o->rows() != n_star) o = &(pooled = adaptive_pool(*o, n_star, n_star));
  if (c->rows() != n_star) c = &(pooled = adaptive_pool(*c, n_star, n_star));
  return DiffMatrix{*c - *o, origin.layer, origin.head, n_star};
}

}  // namespace attndiff
