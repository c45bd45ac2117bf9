// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "test_util.hpp"

using namespace hsphere;
using hsphere::testing::fruit_animal_tree;
using hsphere::testing::random_matrix;
using hsphere::testing::random_tree;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix golden_h() {
  Matrix h(6, 4);
  h << 1, 1, 0, 0,
       0, 0, 1, 1,
       1, 0, 0, 0,
       0, 1, 0, 0,
       0, 0, 1, 0,
       0, 0, 0, 1;
  return h;
}

Vector gaussian(Eigen::Index d, Rng& rng) { return random_matrix(d, 1, rng).col(0); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome golden_hierarchy() {
  const auto layer = build_hierarchical_layer(fruit_animal_tree());
  const Matrix h = layer.dense();
  const bool same = h.rows() == 6 && h.cols() == 4 && h == golden_h();
  return {same, fmt("H is %dx%d, %s the printed matrix", static_cast<int>(h.rows()), static_cast<int>(h.cols()),
                    same ? "equal to" : "different from")};
}

// Independent path walk: w_l = sum over ancestors-or-self p of r0 gamma^depth(p) delta_p.
Matrix walk_hyperplanes(const Matrix& delta, const RadiusSpec& spec, const HierarchyTree& t) {
  std::unordered_map<NodeId, std::optional<NodeId>> parent;
  for (const auto& n : t.nodes) parent[n.id] = n.parent;
  const auto& p_order = t.p_order;
  std::unordered_map<NodeId, Eigen::Index> col;
  for (std::size_t i = 0; i < p_order.size(); ++i) col[p_order[i]] = static_cast<Eigen::Index>(i);
  const auto depth = [&](NodeId n) {
    int d = 0;
    for (auto cur = parent.at(n); cur; cur = parent.at(*cur)) ++d;
    return d;
  };
  const auto& l_order = t.l_order;
  Matrix w = Matrix::Zero(delta.rows(), static_cast<Eigen::Index>(l_order.size()));
  for (std::size_t j = 0; j < l_order.size(); ++j) {
    for (std::optional<NodeId> cur = l_order[j]; cur && parent.at(*cur); cur = parent.at(*cur)) {
      const Eigen::Index i = col.at(*cur);
      const double r = spec.mode == RadiusMode::learnable ? (*spec.learned_values)(i)
                                                          : spec.r0 * std::pow(spec.gamma, depth(*cur));
      w.col(static_cast<Eigen::Index>(j)) += r * delta.col(i);
    }
  }
  return w;
}

Outcome oracle_equivalence() {
  Rng rng(2024);
  double worst = 0.0;
  std::size_t max_p = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = random_tree(1 + static_cast<int>(uniform_index(rng, 200)), rng);
    const auto layer = build_hierarchical_layer(t);
    max_p = std::max(max_p, layer.rows());
    RadiusSpec spec;
    spec.r0 = 0.25 + static_cast<double>(uniform_index(rng, 200)) / 50.0;
    spec.gamma = 0.05 + static_cast<double>(uniform_index(rng, 96)) / 100.0;
    if (trial % 4 == 0) {
      spec.mode = RadiusMode::learnable;
      spec.learned_values = gaussian(static_cast<Eigen::Index>(layer.rows()), rng);
    }
    const auto d = 1 + static_cast<Eigen::Index>(uniform_index(rng, 64));
    const Matrix delta = random_matrix(d, static_cast<Eigen::Index>(layer.rows()), rng);
    const Matrix w = compose_hyperplanes(delta, build_radius_diagonal(layer, spec), layer);
    worst = std::max(worst, (w - oracle_hyperplanes(delta, spec, t)).cwiseAbs().maxCoeff());
    worst = std::max(worst, (w - walk_hyperplanes(delta, spec, t)).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, fmt("max |W - W_oracle|, |W - W_walk| = %.3e over 100 instances (largest |P| = %zu)", worst, max_p)};
}

Outcome manifold_invariants() {
  double tangency = 0.0;
  double drift = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto d = 2 + static_cast<Eigen::Index>(uniform_index(rng, 63));
    auto x = sphere::random_sphere_point(d, rng);
    for (int step = 0; step < 1000; ++step) {
      const Vector g = gaussian(d, rng);
      tangency = std::max(tangency, std::abs(x.vector().dot(sphere::project_tangent(x, g).t)));
      x = sphere::rsgd_step(x, g, 0.05);
      drift = std::max(drift, std::abs(x.vector().norm() - 1.0));
    }
  }
  return {tangency < 1e-10 && drift < 1e-9, fmt("max |x.P_x(y)| = %.3e, max norm drift = %.3e", tangency, drift)};
}

Outcome gradient_suite() {
  const int branching[] = {2, 3};
  const auto tree = layered_tree(branching);
  double worst = 0.0;
  std::string worst_at;
  for (Variant v : kAllVariants) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      ModelConfig c;
      c.variant = v;
      c.input_dim = 6;
      c.hidden_dims = {10};
      c.feature_dim = 8 + 4 * static_cast<int>(seed - 1);
      c.radius.mode = seed == 3 ? RadiusMode::learnable : RadiusMode::fixed;
      Model m(c, tree, seed);
      Rng rng(seed + 50);
      const Matrix x = random_matrix(5, c.input_dim, rng);
      std::vector<int> y;
      for (int i = 0; i < 5; ++i) y.push_back(static_cast<int>(uniform_index(rng, 6)));
      const auto report = grad_check(m, x, y);
      if (report.max_error() >= worst) {
        worst = report.max_error();
        worst_at = std::string(to_string(v));
      }
    }
  }
  return {worst < 1e-5, fmt("max relative error %.3e (worst variant %s)", worst, worst_at.c_str())};
}

// Shared setting for the two directional comparisons on the default dataset.
TrainConfig directional_config(Variant v) {
  TrainConfig c;
  c.model.variant = v;
  c.model.feature_dim = 4;
  c.epochs = 60;
  c.seed = 0;
  return c;
}

Outcome random_tree_ablation(const GeneratedData& g) {
  const auto r = random_hierarchy_ablation(directional_config(Variant::riemann), g.dataset, g.tree, 1000);
  const double gap = r.true_tree.test_accuracy - r.random.test_accuracy;
  return {gap >= 2.0, fmt("true %.2f%% vs random %.2f%% (gap %.2f pp)", r.true_tree.test_accuracy,
                          r.random.test_accuracy, gap)};
}

Outcome superclass_accuracy(const GeneratedData& g) {
  const double multitask = train(directional_config(Variant::multitask), g.dataset, g.tree).history.back().superclass_accuracy;
  bool pass = true;
  std::string detail = fmt("multitask %.2f%%", multitask);
  for (Variant v : {Variant::hierarchy, Variant::manifold, Variant::riemann}) {
    const double acc = train(directional_config(v), g.dataset, g.tree).history.back().superclass_accuracy;
    pass = pass && acc >= multitask;
    detail += fmt(", %s %.2f%%", std::string(to_string(v)).c_str(), acc);
  }
  return {pass, detail};
}

Outcome flat_reduction() {
  SyntheticSpec spec;
  spec.num_supers = 6;
  spec.subs_per_super = 1;
  spec.samples_per_class = 20;
  spec.input_dim = 8;
  const auto g = generate(spec);
  const auto flat = merge_single_child_chains(g.tree);
  if (TreeIndex(flat).max_depth() != 1) return {false, "merged tree is not flat"};

  TrainConfig plain;
  plain.model.variant = Variant::plain;
  plain.model.hidden_dims = {16};
  plain.model.feature_dim = 8;
  plain.epochs = 8;
  plain.seed = 5;
  TrainConfig hier = plain;
  hier.model.variant = Variant::hierarchy;
  hier.model.radius.gamma = 1.0;
  hier.model.radius.r0 = 1.0;

  ModelConfig mp = plain.model, mh = hier.model;
  mp.input_dim = mh.input_dim = spec.input_dim;
  const Model a0(mp, flat, plain.seed), b0(mh, flat, hier.seed);
  const bool logits_equal = a0.forward(g.dataset.features) == b0.forward(g.dataset.features);

  const auto a = train(plain, g.dataset, flat);
  const auto b = train(hier, g.dataset, flat);
  std::ostringstream ma, mb;
  write_metrics_csv(ma, a.history);
  write_metrics_csv(mb, b.history);
  const bool trajectory_equal = ma.str() == mb.str() && a.model.params().w_flat == b.model.params().delta &&
                                a.model.forward(g.dataset.features) == b.model.forward(g.dataset.features);
  return {logits_equal && trajectory_equal,
          fmt("initial logits %s, %d-epoch trajectory and final weights %s", logits_equal ? "bitwise equal" : "differ",
              plain.epochs, trajectory_equal ? "bitwise equal" : "differ")};
}

Outcome radius_decay_sweep() {
  SyntheticSpec spec;
  spec.branching = {3, 3, 2, 2};
  const auto g = generate(spec);
  TrainConfig c;
  c.model.variant = Variant::riemann;
  c.epochs = 60;
  const std::vector<double> gammas = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0};
  const auto rows = radius_sweep(c, g.dataset, g.tree, gammas);
  std::set<double> distinct;
  double best_larger = 0.0;
  for (const auto& r : rows) {
    distinct.insert(r.test_accuracy);
    if (r.gamma > gammas.front()) best_larger = std::max(best_larger, r.test_accuracy);
  }
  std::printf("%s", format_sweep_table(rows).c_str());
  const bool pass = rows.size() == gammas.size() && distinct.size() > 1 && rows.front().test_accuracy <= best_larger;
  return {pass, fmt("depth %d tree, %zu distinct accuracies, gamma 0.5 %.2f%% vs best larger gamma %.2f%%",
                    TreeIndex(g.tree).max_depth(), distinct.size(), rows.front().test_accuracy, best_larger)};
}

Outcome determinism(const GeneratedData& g) {
  TrainConfig c;
  c.model.variant = Variant::riemann;
  c.model.radius.gamma = 0.5;
  c.epochs = 10;
  c.seed = 7;
  std::ostringstream first, second;
  write_metrics_csv(first, train(c, g.dataset, g.tree).history);
  write_metrics_csv(second, train(c, g.dataset, g.tree).history);
  return {first.str() == second.str(), fmt("two runs, metrics %s (%zu bytes)",
                                           first.str() == second.str() ? "identical" : "differ", first.str().size())};
}

}  // namespace

int main() {
  const auto defaults = generate(SyntheticSpec{});
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "golden hierarchy matrix", 1.0, golden_hierarchy},
      {2, "compose vs path-walk oracle", 10.0, oracle_equivalence},
      {3, "sphere tangency and norm", 10.0, manifold_invariants},
      {4, "finite-difference gradients", 60.0, gradient_suite},
      {5, "true vs random hierarchy", 300.0, [&] { return random_tree_ablation(defaults); }},
      {6, "parent-level super-class accuracy", 300.0, [&] { return superclass_accuracy(defaults); }},
      {7, "flat-tree reduction", 60.0, flat_reduction},
      {8, "radius decay sweep", 1800.0, radius_decay_sweep},
      {9, "determinism", 600.0, [&] { return determinism(defaults); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s [%d] %s: %s; %.2fs (limit %.0fs)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.limit_seconds);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
