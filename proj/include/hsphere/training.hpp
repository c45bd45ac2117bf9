#pragma once

// SGD with momentum and weight decay for the extractor and flat heads,
// per-column sphere updates for Delta, a step learning-rate schedule,
// evaluation, finite-difference gradient checking and the ablation drivers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hsphere/common.hpp"
#include "hsphere/data.hpp"
#include "hsphere/hier_layer.hpp"
#include "hsphere/hierarchy.hpp"
#include "hsphere/model.hpp"
#include "hsphere/sphere.hpp"

namespace hsphere {

enum class SphereUpdate { riemannian, projected, none };

inline std::string_view to_string(SphereUpdate s) {
  switch (s) {
    case SphereUpdate::riemannian: return "riemannian";
    case SphereUpdate::projected: return "projected";
    case SphereUpdate::none: return "none";
  }
  return "?";
}

inline SphereUpdate parse_sphere_update(std::string_view s) {
  for (auto u : {SphereUpdate::riemannian, SphereUpdate::projected, SphereUpdate::none}) {
    if (to_string(u) == s) return u;
  }
  throw std::invalid_argument("unknown sphere update '" + std::string(s) + "'");
}

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<double> lr_milestones{0.5, 0.75};  // fractions of the epoch budget
  double lr_factor = 10.0;
  std::uint64_t seed = 0;
  ModelConfig model;
  SphereUpdate sphere_update = SphereUpdate::riemannian;  // riemann variant only
  bool sphere_momentum = false;  // momentum buffer re-projected onto each new tangent space

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw std::invalid_argument("lr0 must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
    if (!(lr_factor > 0.0)) throw std::invalid_argument("lr factor must be positive");
    double prev = 0.0;
    for (double m : lr_milestones) {
      if (!(m > prev && m < 1.0)) throw std::invalid_argument("milestones must be strictly increasing in (0, 1)");
      prev = m;
    }
    if (model.variant == Variant::riemann && sphere_update == SphereUpdate::none) {
      throw std::invalid_argument("the riemann variant needs a sphere update rule");
    }
  }
};

/// lr0 / factor^(number of milestones passed at `epoch`).
inline double learning_rate(const TrainConfig& c, int epoch) {
  int passed = 0;
  for (double m : c.lr_milestones) {
    if (epoch >= m * c.epochs) ++passed;
  }
  return c.lr0 / std::pow(c.lr_factor, passed);
}

struct MetricsRecord {
  int epoch = -1;
  double train_loss = 0.0;  // for evaluate(): loss on the evaluated split
  double test_accuracy = 0.0;
  double superclass_accuracy = 0.0;
  double mean_column_norm_drift = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// Mean |‖delta_p‖ - 1| over the stored columns in riemann mode, 0 otherwise.
inline double column_norm_drift(const Model& model) {
  if (delta_mode(model.variant()) != DeltaMode::riemannian) return 0.0;
  const Matrix& delta = model.params().delta;
  double sum = 0.0;
  for (Eigen::Index p = 0; p < delta.cols(); ++p) sum += std::abs(delta.col(p).norm() - 1.0);
  return delta.cols() ? sum / static_cast<double>(delta.cols()) : 0.0;
}

/// Sub-class and super-class accuracy (percent) on the given rows. Super-class
/// predictions come from the parent-level hyperplanes, the multitask head, or
/// (plain) the super-class of the predicted leaf. Ties go to the lowest index.
inline MetricsRecord evaluate(const Model& model, const LabeledDataset& data, std::span<const std::size_t> split) {
  if (split.empty()) throw std::invalid_argument("cannot evaluate on an empty split");
  const Matrix x = data.rows(split);
  const auto labels = data.labels_of(split);
  const auto supers = model.super_labels(labels);
  const Matrix logits = model.forward(x);
  const auto pred = argmax_rows(logits);
  std::vector<int> super_pred;
  if (model.variant() == Variant::plain) {
    for (int p : pred) super_pred.push_back(model.super_of_label()[static_cast<std::size_t>(p)]);
  } else {
    super_pred = argmax_rows(model.superclass_logits(x));
  }
  std::size_t ok = 0;
  std::size_t super_ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ok += pred[i] == labels[i];
    super_ok += super_pred[i] == supers[i];
  }
  MetricsRecord r;
  r.train_loss = softmax_cross_entropy(logits, labels, nullptr);
  r.test_accuracy = 100.0 * static_cast<double>(ok) / static_cast<double>(labels.size());
  r.superclass_accuracy = 100.0 * static_cast<double>(super_ok) / static_cast<double>(labels.size());
  r.mean_column_norm_drift = column_norm_drift(model);
  return r;
}

/// Optimizer state and the per-tensor update rules.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config) : config_(config) {}

  /// Applies one step. Throws ManifoldError (with the column in the message)
  /// when a sphere update fails; `failed_column` receives the column.
  void step(Model& model, const Parameters& grads, double lr, long* failed_column = nullptr) {
    auto params = model.params().tensors();
    auto gs = grads.tensors();
    const DeltaMode mode = delta_mode(model.variant());
    for (std::size_t k = 0; k < params.size(); ++k) {
      const std::string& name = params[k].first;
      Matrix& p = *params[k].second;
      const Matrix& g = *gs[k].second;
      switch (tensor_role(name)) {
        case TensorRole::theta: sgd(name, p, g, lr, config_.weight_decay); break;
        case TensorRole::radii: p -= lr * g; break;
        case TensorRole::delta:
          if (mode == DeltaMode::euclidean) {
            sgd(name, p, g, lr, config_.weight_decay);
          } else if (mode == DeltaMode::in_model_normalized) {
            sgd(name, p, g, lr, 0.0);
          } else {
            sphere_columns(p, g, lr, failed_column);
          }
          break;
      }
    }
  }

 private:
  void sgd(const std::string& name, Matrix& p, const Matrix& g, double lr, double wd) {
    Matrix& buf = buffer(name, p);
    buf = config_.momentum * buf + (g + wd * p);
    p -= lr * buf;
  }

  Matrix& buffer(const std::string& name, const Matrix& like) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) it = buffers_.emplace(name, Matrix::Zero(like.rows(), like.cols())).first;
    return it->second;
  }

  void sphere_columns(Matrix& delta, const Matrix& g, double lr, long* failed_column) {
    Matrix* buf = config_.sphere_momentum ? &buffer("delta", delta) : nullptr;
    for (Eigen::Index p = 0; p < delta.cols(); ++p) {
      try {
        const sphere::SpherePoint x(delta.col(p));
        Vector next;
        if (!buf) {
          next = config_.sphere_update == SphereUpdate::projected ? sphere::projected_step(x, g.col(p), lr).vector()
                                                                  : sphere::rsgd_step(x, g.col(p), lr).vector();
        } else if (config_.sphere_update == SphereUpdate::projected) {
          buf->col(p) = config_.momentum * buf->col(p) + g.col(p);
          next = sphere::projected_step(x, buf->col(p), lr).vector();
        } else {
          buf->col(p) = config_.momentum * buf->col(p) + sphere::riemannian_gradient(x, g.col(p));
          const sphere::SpherePoint y = sphere::retract(x, -buf->col(p), lr);
          buf->col(p) = sphere::project_tangent(y, buf->col(p)).t;
          next = y.vector();
        }
        delta.col(p) = next;
      } catch (const ManifoldError& e) {
        if (failed_column) *failed_column = static_cast<long>(p);
        throw ManifoldError(std::string(e.what()) + " (Delta column " + std::to_string(p) + ")");
      }
    }
  }

  TrainConfig config_;
  std::map<std::string, Matrix> buffers_;
};

struct TrainResult {
  Model model;
  std::vector<MetricsRecord> history;
};

inline void check_labels_match(const LabeledDataset& data, const HierarchyTree& tree) {
  if (static_cast<std::size_t>(data.num_classes()) != tree.num_l()) {
    throw std::invalid_argument("dataset has " + std::to_string(data.num_classes()) + " classes but the hierarchy has " +
                                std::to_string(tree.num_l()) + " leaves");
  }
}

/// Trains a fresh model. Deterministic for a fixed configuration. The model's
/// input dimension is taken from the dataset.
inline TrainResult train(const TrainConfig& config, const LabeledDataset& data, const HierarchyTree& tree) {
  config.validate();
  check_labels_match(data, tree);
  if (data.train.empty()) throw std::invalid_argument("empty training split");
  ModelConfig mc = config.model;
  mc.input_dim = static_cast<int>(data.input_dim());
  TrainResult result{Model(mc, tree, config.seed), {}};
  Model& model = result.model;
  Optimizer opt(config);
  Rng shuffle_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order = data.train;
  const std::span<const std::size_t> eval_split = data.test.empty() ? std::span<const std::size_t>(data.train)
                                                                     : std::span<const std::size_t>(data.test);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    shuffle_in_place(order, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto count = std::min(order.size() - start, static_cast<std::size_t>(config.batch_size));
      std::span<const std::size_t> batch(order.data() + start, count);
      LossResult r;
      try {
        r = model.loss_and_grads(data.rows(batch), data.labels_of(batch));
      } catch (const std::domain_error& e) {
        throw TrainingError("divergence at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
      }
      if (!std::isfinite(r.loss)) throw TrainingError("non-finite loss at epoch " + std::to_string(epoch), epoch);
      loss_sum += r.loss * static_cast<double>(count);
      long column = -1;
      try {
        opt.step(model, r.grads, lr, &column);
      } catch (const ManifoldError& e) {
        throw TrainingError("sphere update failed at epoch " + std::to_string(epoch) + ": " + e.what(), epoch, column);
      }
    }
    MetricsRecord rec;
    try {
      rec = evaluate(model, data, eval_split);
    } catch (const std::domain_error& e) {
      throw TrainingError("divergence at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    result.history.push_back(rec);
  }
  return result;
}

struct GradCheckEntry {
  std::string tensor;
  std::size_t size = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed() const { return max_error() < tolerance; }
  const GradCheckEntry* find(std::string_view name) const {
    for (const auto& e : entries) {
      if (e.tensor == name) return &e;
    }
    return nullptr;
  }
};

/// Computes analytic gradients for a model; replaceable to test the checker.
using GradientFn = std::function<Parameters(const Model&, const Matrix&, std::span<const int>)>;

/// Gradient floor below which errors are measured absolutely.
inline constexpr double kGradCheckFloor = 1e-4;

/// Central finite differences against the analytic gradient for every tensor.
/// Per tensor the error is max|a - n| / max(max|a|, max|n|, kGradCheckFloor).
inline GradCheckReport grad_check(const Model& model, const Matrix& x, std::span<const int> labels,
                                  double tolerance = 1e-5, double step = 1e-5, GradientFn gradient = {}) {
  if (!gradient) {
    gradient = [](const Model& m, const Matrix& xs, std::span<const int> ys) { return m.loss_and_grads(xs, ys).grads; };
  }
  const Parameters analytic = gradient(model, x, labels);
  Model probe = model;
  auto params = probe.params().tensors();
  auto grads = analytic.tensors();
  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].second;
    const Matrix& a = *grads[k].second;
    Matrix numeric(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + step;
      const double up = probe.loss(x, labels);
      p.data()[i] = saved - step;
      const double down = probe.loss(x, labels);
      p.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * step);
    }
    const double scale = std::max({a.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), kGradCheckFloor});
    report.entries.push_back({params[k].first, static_cast<std::size_t>(p.size()),
                              (a - numeric).cwiseAbs().maxCoeff() / scale});
  }
  return report;
}

struct SweepRow {
  double gamma = 0.0;
  double test_accuracy = 0.0;
  double superclass_accuracy = 0.0;
  double final_loss = 0.0;
  double seconds = 0.0;
};

/// One full training run per gamma with otherwise identical configuration.
inline std::vector<SweepRow> radius_sweep(const TrainConfig& config, const LabeledDataset& data,
                                          const HierarchyTree& tree, std::span<const double> gammas) {
  for (double g : gammas) {
    if (!(g > 0.0 && g <= 1.0)) throw std::invalid_argument("gammas must lie in (0, 1]");
  }
  std::vector<SweepRow> rows;
  for (double g : gammas) {
    TrainConfig c = config;
    c.model.radius.gamma = g;
    const auto t0 = std::chrono::steady_clock::now();
    auto run = train(c, data, tree);
    const auto t1 = std::chrono::steady_clock::now();
    const auto& last = run.history.back();
    rows.push_back({g, last.test_accuracy, last.superclass_accuracy, last.train_loss,
                    std::chrono::duration<double>(t1 - t0).count()});
  }
  return rows;
}

inline std::string format_sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "Radius decay | Test acc (%) | Super acc (%) | Final loss\n";
  out << "-------------+--------------+---------------+-----------\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%12.2f | %12.2f | %13.2f | %10.4f\n", r.gamma, r.test_accuracy,
                  r.superclass_accuracy, r.final_loss);
    out << buf;
  }
  return out.str();
}

struct AblationResult {
  HierarchyTree random_tree;
  MetricsRecord true_tree;
  MetricsRecord random;
};

/// Trains once with the true hierarchy and once with a random super-class
/// assignment with the same number of depth-1 nodes. Same seed and schedule.
inline AblationResult random_hierarchy_ablation(const TrainConfig& config, const LabeledDataset& data,
                                                const HierarchyTree& true_tree, std::uint64_t seed) {
  TreeIndex index(true_tree);
  const auto supers = static_cast<int>(index.nodes_at_depth(1).size());
  AblationResult out;
  out.random_tree = random_hierarchy(static_cast<int>(true_tree.num_l()), supers, seed);
  out.true_tree = train(config, data, true_tree).history.back();
  out.random = train(config, data, out.random_tree).history.back();
  return out;
}

// Metrics as line-oriented CSV: epoch,loss,acc,super_acc,drift
inline void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> history) {
  out << "epoch,loss,acc,super_acc,drift\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.test_accuracy,
                  r.superclass_accuracy, r.mean_column_norm_drift);
    out << buf;
  }
}

inline std::string format_summary(Variant variant, const MetricsRecord& last) {
  std::ostringstream out;
  char buf[128];
  out << "Variant    | Test acc (%) | Super acc (%)\n";
  out << "-----------+--------------+--------------\n";
  std::snprintf(buf, sizeof buf, "%-10s | %12.2f | %13.2f\n", std::string(to_string(variant)).c_str(),
                last.test_accuracy, last.superclass_accuracy);
  out << buf;
  return out.str();
}

// Flat key=value configuration. Keys match the CLI flag names.
namespace detail {

inline std::string join_numbers(const auto& values) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

template <typename T>
std::vector<T> split_numbers(const std::string& s) {
  std::vector<T> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    if constexpr (std::is_integral_v<T>) {
      out.push_back(static_cast<T>(std::stoll(item, &used)));
    } else {
      out.push_back(static_cast<T>(std::stod(item, &used)));
    }
    if (used != item.size()) throw std::invalid_argument("bad number '" + item + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw std::invalid_argument("bad boolean '" + s + "'");
}

}  // namespace detail

inline void write_config(std::ostream& out, const TrainConfig& c) {
  out << std::setprecision(17);
  out << "variant=" << to_string(c.model.variant) << '\n'
      << "epochs=" << c.epochs << '\n'
      << "batch=" << c.batch_size << '\n'
      << "lr=" << c.lr0 << '\n'
      << "momentum=" << c.momentum << '\n'
      << "wd=" << c.weight_decay << '\n'
      << "lr-milestones=" << detail::join_numbers(c.lr_milestones) << '\n'
      << "lr-factor=" << c.lr_factor << '\n'
      << "seed=" << c.seed << '\n'
      << "gamma=" << c.model.radius.gamma << '\n'
      << "r0=" << c.model.radius.r0 << '\n'
      << "radius-mode=" << (c.model.radius.mode == RadiusMode::fixed ? "fixed" : "learnable") << '\n'
      << "sphere-update=" << to_string(c.sphere_update) << '\n'
      << "sphere-momentum=" << (c.sphere_momentum ? "true" : "false") << '\n'
      << "lambda-multitask=" << c.model.lambda_multitask << '\n'
      << "hidden=" << detail::join_numbers(c.model.hidden_dims) << '\n'
      << "feature-dim=" << c.model.feature_dim << '\n'
      << "superclass-level=" << c.model.superclass_level << '\n'
      << "probe-2d=" << (c.model.probe_2d ? "true" : "false") << '\n';
}

inline void apply_config_value(TrainConfig& c, const std::string& key, const std::string& v) {
  auto to_int = [&](const std::string& s) {
    std::size_t used = 0;
    const long long x = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad integer '" + s + "' for " + key);
    return x;
  };
  auto to_double = [&](const std::string& s) {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad number '" + s + "' for " + key);
    return x;
  };
  if (key == "variant") c.model.variant = parse_variant(v);
  else if (key == "epochs") c.epochs = static_cast<int>(to_int(v));
  else if (key == "batch") c.batch_size = static_cast<int>(to_int(v));
  else if (key == "lr") c.lr0 = to_double(v);
  else if (key == "momentum") c.momentum = to_double(v);
  else if (key == "wd") c.weight_decay = to_double(v);
  else if (key == "lr-milestones") c.lr_milestones = detail::split_numbers<double>(v);
  else if (key == "lr-factor") c.lr_factor = to_double(v);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(v));
  else if (key == "gamma") c.model.radius.gamma = to_double(v);
  else if (key == "r0") c.model.radius.r0 = to_double(v);
  else if (key == "radius-mode") {
    if (v == "fixed") c.model.radius.mode = RadiusMode::fixed;
    else if (v == "learnable") c.model.radius.mode = RadiusMode::learnable;
    else throw std::invalid_argument("unknown radius mode '" + v + "'");
  } else if (key == "sphere-update") c.sphere_update = parse_sphere_update(v);
  else if (key == "sphere-momentum") c.sphere_momentum = detail::parse_bool(v);
  else if (key == "lambda-multitask") c.model.lambda_multitask = to_double(v);
  else if (key == "hidden") c.model.hidden_dims = detail::split_numbers<int>(v);
  else if (key == "feature-dim") c.model.feature_dim = static_cast<int>(to_int(v));
  else if (key == "superclass-level") c.model.superclass_level = static_cast<int>(to_int(v));
  else if (key == "probe-2d") c.model.probe_2d = detail::parse_bool(v);
  else throw std::invalid_argument("unknown configuration key '" + key + "'");
}

inline TrainConfig read_config(std::istream& in, TrainConfig base = {}) {
  for (const auto& [k, v] : detail::read_key_values(in, "config")) apply_config_value(base, k, v);
  return base;
}

}  // namespace hsphere
