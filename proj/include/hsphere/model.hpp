#pragma once

// Feature extractor plus the five last-layer variants:
//   plain      logits = f^T W
//   multitask  plain head + super-class head, loss = CE_sub + lambda * CE_super
//   hierarchy  logits = f^T Delta D H, Delta unconstrained
//   manifold   logits = f^T Delta~ D H with Delta~ the column-normalized Delta
//   riemann    as hierarchy, Delta columns kept on the unit sphere by the optimizer
// All gradients are written out by hand; no autodiff.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "hsphere/common.hpp"
#include "hsphere/hier_layer.hpp"
#include "hsphere/hierarchy.hpp"
#include "hsphere/sphere.hpp"

namespace hsphere {

enum class Variant { plain, multitask, hierarchy, manifold, riemann };

inline constexpr Variant kAllVariants[] = {Variant::plain, Variant::multitask, Variant::hierarchy, Variant::manifold,
                                           Variant::riemann};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::plain: return "plain";
    case Variant::multitask: return "multitask";
    case Variant::hierarchy: return "hierarchy";
    case Variant::manifold: return "manifold";
    case Variant::riemann: return "riemann";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

/// How the stored Delta relates to the sphere constraint.
enum class DeltaMode { none, euclidean, in_model_normalized, riemannian };

inline DeltaMode delta_mode(Variant v) {
  switch (v) {
    case Variant::plain:
    case Variant::multitask: return DeltaMode::none;
    case Variant::hierarchy: return DeltaMode::euclidean;
    case Variant::manifold: return DeltaMode::in_model_normalized;
    case Variant::riemann: return DeltaMode::riemannian;
  }
  return DeltaMode::none;
}

inline bool uses_hierarchy(Variant v) { return delta_mode(v) != DeltaMode::none; }

struct ModelConfig {
  Variant variant = Variant::riemann;
  int input_dim = 16;
  std::vector<int> hidden_dims{64, 64};
  int feature_dim = 32;
  double lambda_multitask = 1.0;
  RadiusSpec radius;
  int superclass_level = 1;
  bool probe_2d = false;
};

/// y = x W^T + b, with W stored out x in and b as an out x 1 column.
struct Affine {
  Matrix weight;
  Matrix bias;
};

/// Every trainable tensor. Also used, with identical shapes, for gradients.
/// Tensors a variant does not use are left empty.
struct Parameters {
  std::vector<Affine> extractor;
  std::optional<Affine> probe;
  Matrix w_flat;   // plain / multitask leaf head, k x |L|
  Matrix w_super;  // multitask super-class head, k x S
  Matrix delta;    // hierarchy variants, k x |P|
  Matrix radii;    // learnable radius mode, |P| x 1

  /// Non-empty tensors in a fixed order with stable names.
  template <typename Self>
  static auto named(Self& self) {
    using Ptr = std::conditional_t<std::is_const_v<Self>, const Matrix*, Matrix*>;
    std::vector<std::pair<std::string, Ptr>> out;
    for (std::size_t l = 0; l < self.extractor.size(); ++l) {
      out.emplace_back("extractor." + std::to_string(l) + ".weight", &self.extractor[l].weight);
      out.emplace_back("extractor." + std::to_string(l) + ".bias", &self.extractor[l].bias);
    }
    if (self.probe) {
      out.emplace_back("probe.weight", &self.probe->weight);
      out.emplace_back("probe.bias", &self.probe->bias);
    }
    if (self.w_flat.size()) out.emplace_back("w_flat", &self.w_flat);
    if (self.w_super.size()) out.emplace_back("w_super", &self.w_super);
    if (self.delta.size()) out.emplace_back("delta", &self.delta);
    if (self.radii.size()) out.emplace_back("radii", &self.radii);
    return out;
  }
  std::vector<std::pair<std::string, Matrix*>> tensors() { return named(*this); }
  std::vector<std::pair<std::string, const Matrix*>> tensors() const { return named(*this); }

  Parameters zeros_like() const {
    Parameters z = *this;
    for (auto& [name, t] : z.tensors()) t->setZero();
    return z;
  }
};

/// Which optimizer rule a tensor follows.
enum class TensorRole { theta, delta, radii };

inline TensorRole tensor_role(std::string_view name) {
  if (name == "delta") return TensorRole::delta;
  if (name == "radii") return TensorRole::radii;
  return TensorRole::theta;
}

struct LossResult {
  double loss = 0.0;
  Parameters grads;
  Matrix grad_w;  // gradient with respect to the leaf hyperplanes W
};

/// Mean softmax cross-entropy with max-subtracted log-sum-exp. When `dlogits`
/// is given it receives (softmax - onehot) / B.
inline double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* dlogits) {
  const Eigen::Index b = logits.rows();
  const Eigen::Index c = logits.cols();
  if (b == 0) throw std::invalid_argument("empty batch");
  if (static_cast<std::size_t>(b) != labels.size()) throw std::invalid_argument("label count does not match batch");
  if (dlogits) dlogits->resize(b, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw std::out_of_range("label " + std::to_string(y) + " out of range");
    const double m = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) sum += std::exp(logits(i, j) - m);
    const double lse = m + std::log(sum);
    total += lse - logits(i, y);
    if (dlogits) {
      for (Eigen::Index j = 0; j < c; ++j) (*dlogits)(i, j) = std::exp(logits(i, j) - lse) / static_cast<double>(b);
      (*dlogits)(i, y) -= 1.0 / static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}

/// Index of the largest entry of each row; ties go to the lowest index.
inline std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

class Model {
 public:
  Model(ModelConfig config, HierarchyTree tree, std::uint64_t seed)
      : config_(std::move(config)), tree_(std::move(tree)), layer_(tree_) {
    if (config_.input_dim < 1 || config_.feature_dim < 1) throw std::invalid_argument("dimensions must be >= 1");
    for (int h : config_.hidden_dims) {
      if (h < 1) throw std::invalid_argument("hidden widths must be >= 1");
    }
    if (config_.variant == Variant::multitask && !(std::isfinite(config_.lambda_multitask))) {
      throw std::invalid_argument("lambda_multitask must be finite");
    }
    fixed_radii_ = build_radius_diagonal(layer_, config_.radius);
    build_super_map();

    Rng rng(seed);
    int in = config_.input_dim;
    std::vector<int> widths = config_.hidden_dims;
    widths.push_back(config_.feature_dim);
    for (int out : widths) {
      params_.extractor.push_back(random_affine(out, in, std::sqrt(2.0 / in), rng));
      in = out;
    }
    const bool probe = config_.probe_2d;
    config_.probe_2d = false;
    if (probe) {
      attach_probe(rng);
    } else {
      init_last_layer(rng);
    }
  }

  const ModelConfig& config() const noexcept { return config_; }
  Variant variant() const noexcept { return config_.variant; }
  const HierarchyTree& tree() const noexcept { return tree_; }
  const HierarchicalLayer& layer() const noexcept { return layer_; }
  Parameters& params() noexcept { return params_; }
  const Parameters& params() const noexcept { return params_; }

  std::size_t num_classes() const noexcept { return tree_.num_l(); }
  std::size_t num_superclasses() const noexcept { return super_nodes_.size(); }
  /// Super-class index (at the configured level) of every leaf label.
  const std::vector<int>& super_of_label() const noexcept { return super_of_label_; }
  int last_layer_dim() const noexcept { return config_.probe_2d ? 2 : config_.feature_dim; }
  bool has_probe() const noexcept { return config_.probe_2d; }

  /// Inserts a trainable affine map to two dimensions before the last layer
  /// and re-initializes the last layer at that width.
  void attach_2d_probe(std::uint64_t seed) {
    if (config_.probe_2d) throw std::logic_error("2-d probe already attached");
    Rng rng(seed);
    attach_probe(rng);
  }

  /// Diagonal of D currently in effect.
  Vector radii() const {
    if (config_.radius.mode == RadiusMode::learnable) return params_.radii.col(0);
    return fixed_radii_;
  }

  /// Delta as seen by the forward pass (column-normalized in manifold mode).
  Matrix effective_delta() const {
    if (delta_mode(config_.variant) != DeltaMode::in_model_normalized) return params_.delta;
    Matrix out = params_.delta;
    for (Eigen::Index p = 0; p < out.cols(); ++p) {
      const double n = out.col(p).norm();
      if (!(n > tol::kZeroNorm)) throw std::domain_error("cannot normalize zero Delta column " + std::to_string(p));
      out.col(p) /= n;
    }
    return out;
  }

  /// Leaf hyperplanes W (k x |L|).
  Matrix hyperplanes() const {
    if (!uses_hierarchy(config_.variant)) return params_.w_flat;
    return compose_hyperplanes(effective_delta(), radii(), layer_);
  }

  /// Input of the last layer: the extractor output, or the probe's 2-d output.
  Matrix features(const Matrix& x) const {
    Cache cache;
    return run_extractor(x, cache);
  }

  Matrix forward(const Matrix& x) const {
    Matrix logits = features(x) * hyperplanes();
    if (!logits.allFinite()) throw std::domain_error("non-finite logits");
    return logits;
  }

  Matrix superclass_logits(const Matrix& x) const { return superclass_logits(x, config_.superclass_level); }

  Matrix superclass_logits(const Matrix& x, int level) const {
    switch (config_.variant) {
      case Variant::plain: throw std::logic_error("the plain variant has no super-class classifier");
      case Variant::multitask:
        if (level != config_.superclass_level) throw std::invalid_argument("the multitask head covers only its trained level");
        return features(x) * params_.w_super;
      default: return features(x) * parent_level_hyperplanes(effective_delta(), radii(), tree_, level);
    }
  }

  double loss(const Matrix& x, std::span<const int> labels) const {
    Matrix f = features(x);
    double value = softmax_cross_entropy(f * hyperplanes(), labels, nullptr);
    if (config_.variant == Variant::multitask) {
      const auto supers = super_labels(labels);
      value += config_.lambda_multitask * softmax_cross_entropy(f * params_.w_super, supers, nullptr);
    }
    return value;
  }

  LossResult loss_and_grads(const Matrix& x, std::span<const int> labels) const {
    LossResult r;
    r.grads = params_.zeros_like();
    Cache cache;
    const Matrix f = run_extractor(x, cache);
    const Matrix delta_hat = uses_hierarchy(config_.variant) ? effective_delta() : Matrix();
    const Vector d = radii();
    const Matrix w = uses_hierarchy(config_.variant) ? compose_hyperplanes(delta_hat, d, layer_) : params_.w_flat;

    Matrix dlogits;
    r.loss = softmax_cross_entropy(f * w, labels, &dlogits);
    r.grad_w = f.transpose() * dlogits;
    Matrix df = dlogits * w.transpose();

    switch (delta_mode(config_.variant)) {
      case DeltaMode::none: r.grads.w_flat = r.grad_w; break;
      case DeltaMode::euclidean:
      case DeltaMode::riemannian: r.grads.delta = pull_back_to_delta(r.grad_w, d, layer_); break;
      case DeltaMode::in_model_normalized: {
        const Matrix g_hat = pull_back_to_delta(r.grad_w, d, layer_);
        // d(delta/|delta|) = (I - u u^T) / |delta|
        for (Eigen::Index p = 0; p < g_hat.cols(); ++p) {
          const double n = params_.delta.col(p).norm();
          const auto u = delta_hat.col(p);
          r.grads.delta.col(p) = (g_hat.col(p) - u * u.dot(g_hat.col(p))) / n;
        }
        break;
      }
    }
    if (config_.radius.mode == RadiusMode::learnable && uses_hierarchy(config_.variant)) {
      const Matrix m = delta_hat.transpose() * r.grad_w;
      for (std::size_t j = 0; j < layer_.cols(); ++j) {
        for (std::size_t i : layer_.ancestors(j)) {
          r.grads.radii(static_cast<Eigen::Index>(i), 0) += m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
      }
    }
    if (config_.variant == Variant::multitask) {
      const auto supers = super_labels(labels);
      Matrix dsuper;
      r.loss += config_.lambda_multitask * softmax_cross_entropy(f * params_.w_super, supers, &dsuper);
      dsuper *= config_.lambda_multitask;
      r.grads.w_super = f.transpose() * dsuper;
      df += dsuper * params_.w_super.transpose();
    }
    if (!std::isfinite(r.loss)) throw std::domain_error("non-finite loss");
    backprop_extractor(x, cache, df, r.grads);
    return r;
  }

  std::vector<int> super_labels(std::span<const int> labels) const {
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= super_of_label_.size()) {
        throw std::out_of_range("label " + std::to_string(y) + " out of range");
      }
      out[i] = super_of_label_[static_cast<std::size_t>(y)];
    }
    return out;
  }

 private:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each extractor layer
    std::vector<Matrix> pre;     // pre-activation of each extractor layer
    Matrix phi;                  // extractor output
  };

  static Affine random_affine(int out, int in, double scale, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Affine a{Matrix(out, in), Matrix::Zero(out, 1)};
    for (Eigen::Index j = 0; j < a.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < a.weight.rows(); ++i) a.weight(i, j) = scale * normal(rng);
    }
    return a;
  }

  static Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * normal(rng);
    }
    return m;
  }

  void attach_probe(Rng& rng) {
    params_.probe = random_affine(2, config_.feature_dim, std::sqrt(1.0 / config_.feature_dim), rng);
    config_.probe_2d = true;
    init_last_layer(rng);
  }

  void init_last_layer(Rng& rng) {
    const Eigen::Index k = last_layer_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(k));
    const auto num_l = static_cast<Eigen::Index>(tree_.num_l());
    const auto num_p = static_cast<Eigen::Index>(tree_.num_p());
    params_.w_flat.resize(0, 0);
    params_.w_super.resize(0, 0);
    params_.delta.resize(0, 0);
    params_.radii.resize(0, 0);
    switch (delta_mode(config_.variant)) {
      case DeltaMode::none:
        params_.w_flat = random_matrix(k, num_l, scale, rng);
        if (config_.variant == Variant::multitask) {
          params_.w_super = random_matrix(k, static_cast<Eigen::Index>(super_nodes_.size()), scale, rng);
        }
        return;
      case DeltaMode::euclidean: params_.delta = random_matrix(k, num_p, scale, rng); break;
      case DeltaMode::in_model_normalized:
      case DeltaMode::riemannian:
        params_.delta.resize(k, num_p);
        for (Eigen::Index p = 0; p < num_p; ++p) params_.delta.col(p) = sphere::random_sphere_point(k, rng).vector();
        break;
    }
    if (config_.radius.mode == RadiusMode::learnable) params_.radii = fixed_radii_;
  }

  void build_super_map() {
    TreeIndex index(tree_);
    super_nodes_ = index.nodes_at_depth(config_.superclass_level);
    if (super_nodes_.empty()) {
      throw std::invalid_argument("no nodes at super-class level " + std::to_string(config_.superclass_level));
    }
    super_of_label_.clear();
    for (NodeId leaf : tree_.l_order) {
      if (index.depth(leaf) < config_.superclass_level) {
        throw std::invalid_argument("leaf " + std::to_string(leaf) + " is above the super-class level");
      }
      NodeId anc = index.ancestor_at_depth(leaf, config_.superclass_level);
      auto pos = std::find(super_nodes_.begin(), super_nodes_.end(), anc) - super_nodes_.begin();
      super_of_label_.push_back(static_cast<int>(pos));
    }
  }

  Matrix run_extractor(const Matrix& x, Cache& cache) const {
    if (x.cols() != config_.input_dim) {
      throw std::invalid_argument("input has " + std::to_string(x.cols()) + " columns, expected " +
                                  std::to_string(config_.input_dim));
    }
    Matrix a = x;
    const std::size_t n = params_.extractor.size();
    for (std::size_t l = 0; l < n; ++l) {
      const Affine& layer = params_.extractor[l];
      Matrix z = a * layer.weight.transpose();
      z.rowwise() += layer.bias.col(0).transpose();
      cache.inputs.push_back(std::move(a));
      a = l + 1 < n ? Matrix(z.cwiseMax(0.0)) : z;
      cache.pre.push_back(std::move(z));
    }
    if (!a.allFinite()) throw std::domain_error("non-finite activations");
    cache.phi = a;
    if (!params_.probe) return a;
    Matrix e = a * params_.probe->weight.transpose();
    e.rowwise() += params_.probe->bias.col(0).transpose();
    return e;
  }

  void backprop_extractor(const Matrix& x, const Cache& cache, const Matrix& dfeatures, Parameters& g) const {
    (void)x;
    Matrix dphi = dfeatures;
    if (params_.probe) {
      g.probe->weight = dfeatures.transpose() * cache.phi;
      g.probe->bias = dfeatures.colwise().sum().transpose();
      dphi = dfeatures * params_.probe->weight;
    }
    Matrix da = std::move(dphi);
    for (std::size_t l = params_.extractor.size(); l-- > 0;) {
      Matrix dz = da;
      if (l + 1 < params_.extractor.size()) dz = dz.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
      g.extractor[l].weight = dz.transpose() * cache.inputs[l];
      g.extractor[l].bias = dz.colwise().sum().transpose();
      if (l > 0) da = dz * params_.extractor[l].weight;
    }
  }

  ModelConfig config_;
  HierarchyTree tree_;
  HierarchicalLayer layer_;
  Vector fixed_radii_;
  std::vector<NodeId> super_nodes_;
  std::vector<int> super_of_label_;
  Parameters params_;
};

}  // namespace hsphere
