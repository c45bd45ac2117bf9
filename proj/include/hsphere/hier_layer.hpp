#pragma once

// The hierarchical layer H, the radius diagonal D and the hyperplane
// composition W = Delta * D * H, together with a path-walking reference
// implementation that avoids matrix algebra entirely.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hsphere/common.hpp"
#include "hsphere/hierarchy.hpp"

namespace hsphere {

/// Above this many rows H is kept only as per-column ancestor lists.
inline constexpr std::size_t kDenseRowLimit = 1024;

/// Fixed binary |P| x |L| matrix: H(i, j) = 1 iff p_i is an ancestor-or-self
/// of leaf l_j. Immutable once built.
class HierarchicalLayer {
 public:
  explicit HierarchicalLayer(const HierarchyTree& tree) : p_order_(tree.p_order), l_order_(tree.l_order) {
    TreeIndex index(tree);
    row_depth_.reserve(p_order_.size());
    for (NodeId id : p_order_) row_depth_.push_back(index.depth(id));
    ancestors_.resize(l_order_.size());
    for (std::size_t j = 0; j < l_order_.size(); ++j) {
      for (NodeId id : index.path_from_root(l_order_[j])) ancestors_[j].push_back(index.p_index(id));
    }
    if (rows() <= kDenseRowLimit) dense_ = to_dense();
  }

  std::size_t rows() const noexcept { return p_order_.size(); }
  std::size_t cols() const noexcept { return l_order_.size(); }
  bool is_dense() const noexcept { return dense_.has_value(); }

  /// Rows of the nonzero entries of column j, ordered from depth 1 downward.
  std::span<const std::size_t> ancestors(std::size_t j) const { return ancestors_.at(j); }
  int row_depth(std::size_t i) const { return row_depth_.at(i); }
  const std::vector<NodeId>& p_order() const noexcept { return p_order_; }
  const std::vector<NodeId>& l_order() const noexcept { return l_order_; }

  int entry(std::size_t i, std::size_t j) const {
    const auto& a = ancestors_.at(j);
    return std::find(a.begin(), a.end(), i) != a.end() ? 1 : 0;
  }

  /// Stored dense matrix; only available when rows() <= kDenseRowLimit.
  const Matrix& dense() const {
    if (!dense_) throw std::logic_error("H is stored sparse for more than kDenseRowLimit rows");
    return *dense_;
  }

  Matrix to_dense() const {
    Matrix h = Matrix::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    for (std::size_t j = 0; j < cols(); ++j) {
      for (std::size_t i : ancestors_[j]) h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
    }
    return h;
  }

 private:
  std::vector<NodeId> p_order_;
  std::vector<NodeId> l_order_;
  std::vector<int> row_depth_;
  std::vector<std::vector<std::size_t>> ancestors_;
  std::optional<Matrix> dense_;
};

inline HierarchicalLayer build_hierarchical_layer(const HierarchyTree& tree) { return HierarchicalLayer(tree); }

enum class RadiusMode { fixed, learnable };

struct RadiusSpec {
  double r0 = 1.0;
  double gamma = 0.5;
  RadiusMode mode = RadiusMode::fixed;
  std::optional<Vector> learned_values;  // learnable mode only, one entry per row of H
};

inline double decayed_radius(double r0, double gamma, int depth) { return r0 * std::pow(gamma, depth); }

/// Diagonal of D. Fixed mode: r0 * gamma^depth(p_i). Learnable mode: the
/// learned values, or the fixed-mode values when none were learned yet.
inline Vector build_radius_diagonal(const HierarchicalLayer& h, const RadiusSpec& spec) {
  if (!(spec.r0 > 0.0) || !std::isfinite(spec.r0)) throw std::invalid_argument("r0 must be positive");
  if (!(spec.gamma > 0.0) || !std::isfinite(spec.gamma)) throw std::invalid_argument("gamma must be positive");
  const auto n = static_cast<Eigen::Index>(h.rows());
  if (spec.mode == RadiusMode::learnable && spec.learned_values) {
    const Vector& v = *spec.learned_values;
    if (v.size() != n) throw std::invalid_argument("learned radii have the wrong length");
    if (!v.allFinite()) throw std::invalid_argument("learned radii must be finite");
    return v;
  }
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = decayed_radius(spec.r0, spec.gamma, h.row_depth(static_cast<std::size_t>(i)));
  return d;
}

inline Vector build_radius_diagonal(const HierarchyTree& tree, const RadiusSpec& spec) {
  return build_radius_diagonal(HierarchicalLayer(tree), spec);
}

/// W = Delta * diag(radii) * H, a d x |L| matrix.
inline Matrix compose_hyperplanes(const Matrix& delta, const Vector& radii, const HierarchicalLayer& h) {
  if (static_cast<std::size_t>(delta.cols()) != h.rows() || static_cast<std::size_t>(radii.size()) != h.rows()) {
    throw std::invalid_argument("dimension mismatch: Delta must be d x |P| and D |P| x |P|");
  }
  if (h.is_dense()) return (delta * radii.asDiagonal()) * h.dense();
  Matrix w = Matrix::Zero(delta.rows(), static_cast<Eigen::Index>(h.cols()));
  for (std::size_t j = 0; j < h.cols(); ++j) {
    for (std::size_t i : h.ancestors(j)) {
      const auto r = static_cast<Eigen::Index>(i);
      w.col(static_cast<Eigen::Index>(j)) += radii(r) * delta.col(r);
    }
  }
  return w;
}

/// Pulls a gradient with respect to W back to Delta: G_W * H^T * D.
inline Matrix pull_back_to_delta(const Matrix& grad_w, const Vector& radii, const HierarchicalLayer& h) {
  if (static_cast<std::size_t>(grad_w.cols()) != h.cols()) throw std::invalid_argument("grad_W has the wrong width");
  if (h.is_dense()) return (grad_w * h.dense().transpose()) * radii.asDiagonal();
  Matrix g = Matrix::Zero(grad_w.rows(), static_cast<Eigen::Index>(h.rows()));
  for (std::size_t j = 0; j < h.cols(); ++j) {
    for (std::size_t i : h.ancestors(j)) g.col(static_cast<Eigen::Index>(i)) += grad_w.col(static_cast<Eigen::Index>(j));
  }
  return g * radii.asDiagonal();
}

/// Reference for compose_hyperplanes: for each leaf, walk its path from the
/// root and add R_p * delta_p at every node, with R_p taken from the spec.
inline Matrix oracle_hyperplanes(const Matrix& delta, const RadiusSpec& spec, const HierarchyTree& tree) {
  TreeIndex index(tree);
  if (static_cast<std::size_t>(delta.cols()) != tree.num_p()) throw std::invalid_argument("dimension mismatch: Delta must be d x |P|");
  if (spec.mode == RadiusMode::learnable && spec.learned_values &&
      static_cast<std::size_t>(spec.learned_values->size()) != tree.num_p()) {
    throw std::invalid_argument("learned radii have the wrong length");
  }
  Matrix w(delta.rows(), static_cast<Eigen::Index>(tree.num_l()));
  for (std::size_t j = 0; j < tree.num_l(); ++j) {
    Vector acc = Vector::Zero(delta.rows());
    for (NodeId id : index.path_from_root(tree.l_order[j])) {
      const auto row = static_cast<Eigen::Index>(index.p_index(id));
      const double radius = spec.mode == RadiusMode::learnable && spec.learned_values
                                ? (*spec.learned_values)(row)
                                : decayed_radius(spec.r0, spec.gamma, index.depth(id));
      for (Eigen::Index k = 0; k < delta.rows(); ++k) acc(k) += radius * delta(k, row);
    }
    w.col(static_cast<Eigen::Index>(j)) = acc;
  }
  return w;
}

/// Hyperplanes of the internal nodes at `level`: the sum of scaled offsets
/// along each node's path, truncated at that node. Columns follow P order.
inline Matrix parent_level_hyperplanes(const Matrix& delta, const Vector& radii, const HierarchyTree& tree, int level) {
  if (level < 1) throw std::invalid_argument("level must be >= 1");
  TreeIndex index(tree);
  if (static_cast<std::size_t>(delta.cols()) != tree.num_p() || static_cast<std::size_t>(radii.size()) != tree.num_p()) {
    throw std::invalid_argument("dimension mismatch: Delta must be d x |P| and D |P| x |P|");
  }
  const auto nodes = index.nodes_at_depth(level);
  if (nodes.empty()) throw std::invalid_argument("no nodes at level " + std::to_string(level));
  Matrix w = Matrix::Zero(delta.rows(), static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t c = 0; c < nodes.size(); ++c) {
    for (NodeId id : index.path_from_root(nodes[c])) {
      const auto row = static_cast<Eigen::Index>(index.p_index(id));
      w.col(static_cast<Eigen::Index>(c)) += radii(row) * delta.col(row);
    }
  }
  return w;
}

// Plain-text matrices: "rows cols" on the first line, then one
// space-separated row per line, 17 significant digits.
inline void write_matrix_text(std::ostream& out, const Matrix& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << m(i, j);
    }
    out << '\n';
  }
}

inline Matrix read_matrix_text(std::istream& in) {
  Eigen::Index rows = -1;
  Eigen::Index cols = -1;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0) throw ParseError("matrix header must be 'rows cols'");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(in >> m(i, j))) {
        throw ParseError("matrix truncated at row " + std::to_string(i) + ", column " + std::to_string(j));
      }
    }
  }
  return m;
}

}  // namespace hsphere
