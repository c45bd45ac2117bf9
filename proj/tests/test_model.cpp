#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace hsphere;
using hsphere::testing::fruit_animal_tree;
using hsphere::testing::random_matrix;

namespace {

ModelConfig small_config(Variant v, int input_dim = 5, int feature_dim = 8) {
  ModelConfig c;
  c.variant = v;
  c.input_dim = input_dim;
  c.hidden_dims = {6};
  c.feature_dim = feature_dim;
  return c;
}

std::vector<int> labels_for(int batch, int classes) {
  std::vector<int> y;
  for (int i = 0; i < batch; ++i) y.push_back(i % classes);
  return y;
}

}  // namespace

TEST(Variant, NamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("resnet"), std::invalid_argument);
  EXPECT_FALSE(uses_hierarchy(Variant::plain));
  EXPECT_FALSE(uses_hierarchy(Variant::multitask));
  EXPECT_EQ(delta_mode(Variant::hierarchy), DeltaMode::euclidean);
  EXPECT_EQ(delta_mode(Variant::manifold), DeltaMode::in_model_normalized);
  EXPECT_EQ(delta_mode(Variant::riemann), DeltaMode::riemannian);
}

TEST(Model, ParameterShapes) {
  const auto t = fruit_animal_tree();
  Model plain(small_config(Variant::plain), t, 1);
  EXPECT_EQ(plain.params().w_flat.rows(), 8);
  EXPECT_EQ(plain.params().w_flat.cols(), 4);
  EXPECT_EQ(plain.params().delta.size(), 0);
  Model multi(small_config(Variant::multitask), t, 1);
  EXPECT_EQ(multi.params().w_super.cols(), 2);
  Model riem(small_config(Variant::riemann), t, 1);
  EXPECT_EQ(riem.params().delta.rows(), 8);
  EXPECT_EQ(riem.params().delta.cols(), 6);
  for (Eigen::Index p = 0; p < 6; ++p) EXPECT_NEAR(riem.params().delta.col(p).norm(), 1.0, 1e-12);
  EXPECT_EQ(riem.super_of_label(), (std::vector<int>{0, 0, 1, 1}));
}

TEST(Forward, ZeroDeltaGivesZeroLogits) {
  Model m(small_config(Variant::hierarchy), fruit_animal_tree(), 2);
  m.params().delta.setZero();
  Rng rng(3);
  const Matrix x = random_matrix(4, 5, rng);
  EXPECT_TRUE(m.forward(x).isZero(0.0));
  EXPECT_TRUE(m.superclass_logits(x).isZero(0.0));
  EXPECT_EQ(m.superclass_logits(x).cols(), 2);
}

TEST(Forward, MatchesOracleHyperplanes) {
  const auto t = fruit_animal_tree();
  Model m(small_config(Variant::riemann), t, 4);
  Rng rng(5);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix expected = m.features(x) * oracle_hyperplanes(m.params().delta, RadiusSpec{}, t);
  EXPECT_LT((m.forward(x) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, FlatTreeReducesToPlainExactly) {
  const auto flat = parse_hierarchy_string("4\n1 0\n2 0\n3 0\n4 0\n");
  ModelConfig pc = small_config(Variant::plain);
  ModelConfig hc = small_config(Variant::hierarchy);
  hc.radius.gamma = 1.0;  // depth-1 leaves: D = I
  Model plain(pc, flat, 7);
  Model hier(hc, flat, 7);
  EXPECT_EQ(plain.params().w_flat, hier.params().delta);
  Rng rng(8);
  const Matrix x = random_matrix(6, 5, rng);
  EXPECT_EQ(plain.forward(x), hier.forward(x));
}

TEST(Forward, InputDimensionMismatch) {
  Model m(small_config(Variant::plain), fruit_animal_tree(), 1);
  EXPECT_THROW(m.forward(Matrix::Zero(2, 4)), std::invalid_argument);
}

TEST(Forward, ManifoldLogitsInvariantToColumnScale) {
  Model m(small_config(Variant::manifold), fruit_animal_tree(), 9);
  Rng rng(10);
  const Matrix x = random_matrix(3, 5, rng);
  const Matrix before = m.forward(x);
  m.params().delta.col(2) *= 3.7;
  m.params().delta.col(5) *= 0.01;
  EXPECT_LT((m.forward(x) - before).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, RiemannLogitsInvariantToRenormalization) {
  Model m(small_config(Variant::riemann), fruit_animal_tree(), 11);
  Rng rng(12);
  const Matrix x = random_matrix(3, 5, rng);
  const Matrix before = m.forward(x);
  m.params().delta.colwise().normalize();
  EXPECT_LT((m.forward(x) - before).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Loss, UniformLogitsGiveLogClassCount) {
  Model m(small_config(Variant::hierarchy), fruit_animal_tree(), 13);
  m.params().delta.setZero();
  Rng rng(14);
  const Matrix x = random_matrix(5, 5, rng);
  EXPECT_EQ(m.loss(x, labels_for(5, 4)), std::log(4.0));
}

TEST(Loss, LabelOutOfRange) {
  Model m(small_config(Variant::plain), fruit_animal_tree(), 1);
  const std::vector<int> bad{0, 4};
  EXPECT_THROW(m.loss(Matrix::Zero(2, 5), bad), std::out_of_range);
  EXPECT_THROW(m.loss(Matrix::Zero(0, 5), std::vector<int>{}), std::invalid_argument);
}

TEST(Loss, SoftmaxCrossEntropyIsStableForLargeLogits) {
  Matrix logits(1, 3);
  logits << 1000.0, 0.0, -1000.0;
  Matrix d;
  const double l = softmax_cross_entropy(logits, std::vector<int>{0}, &d);
  EXPECT_EQ(l, 0.0);
  EXPECT_TRUE(d.allFinite());
}

TEST(Gradients, HandComputedSingleSample) {
  // Extractor: one affine map 1 -> 1 without nonlinearity, phi = a x + b.
  // Plain head w = (w0, w1), logits z_k = phi w_k, label 0.
  // dL/dw_k = phi (s_k - [k == 0]); dL/dphi = sum_k w_k (s_k - [k == 0]).
  const auto t = parse_hierarchy_string("2\n1 0\n2 0\n");
  ModelConfig c;
  c.variant = Variant::plain;
  c.input_dim = 1;
  c.hidden_dims = {};
  c.feature_dim = 1;
  Model m(c, t, 0);
  m.params().extractor[0].weight(0, 0) = 0.7;
  m.params().extractor[0].bias(0, 0) = -0.2;
  m.params().w_flat << 1.5, -0.5;
  const Matrix x = Matrix::Constant(1, 1, 2.0);
  const double phi = 0.7 * 2.0 - 0.2;
  const double z0 = phi * 1.5;
  const double z1 = phi * -0.5;
  const double s0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  const double s1 = 1.0 - s0;
  const double dphi = 1.5 * (s0 - 1.0) + -0.5 * s1;

  const auto r = m.loss_and_grads(x, std::vector<int>{0});
  EXPECT_NEAR(r.loss, -std::log(s0), 1e-15);
  EXPECT_NEAR(r.grads.w_flat(0, 0), phi * (s0 - 1.0), 1e-15);
  EXPECT_NEAR(r.grads.w_flat(0, 1), phi * s1, 1e-15);
  EXPECT_NEAR(r.grads.extractor[0].weight(0, 0), dphi * 2.0, 1e-15);
  EXPECT_NEAR(r.grads.extractor[0].bias(0, 0), dphi, 1e-15);
}

TEST(Gradients, DeltaGradientIsPullBackOfW) {
  const auto t = fruit_animal_tree();
  Model m(small_config(Variant::hierarchy), t, 15);
  Rng rng(16);
  const Matrix x = random_matrix(4, 5, rng);
  const auto r = m.loss_and_grads(x, labels_for(4, 4));
  const Matrix expected = r.grad_w * m.layer().dense().transpose() * m.radii().asDiagonal();
  EXPECT_LT((r.grads.delta - expected).cwiseAbs().maxCoeff(), 1e-14);
}

class GradCheckVariants : public ::testing::TestWithParam<Variant> {};

TEST_P(GradCheckVariants, FiniteDifferencesAgree) {
  const Variant v = GetParam();
  const int branching[] = {2, 3};
  const auto t = layered_tree(branching);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Model m(small_config(v), t, seed);
    Rng rng(seed + 100);
    const Matrix x = random_matrix(4, 5, rng);
    const auto report = grad_check(m, x, labels_for(4, 6));
    EXPECT_TRUE(report.passed()) << to_string(v) << " seed " << seed << " max error " << report.max_error();
    EXPECT_EQ(report.entries.size(), m.params().tensors().size());
  }
}

TEST_P(GradCheckVariants, LearnableRadiiAndProbe) {
  const Variant v = GetParam();
  ModelConfig c = small_config(v);
  c.radius.mode = RadiusMode::learnable;
  c.probe_2d = true;
  Model m(c, fruit_animal_tree(), 21);
  EXPECT_TRUE(m.has_probe());
  Rng rng(22);
  const Matrix x = random_matrix(3, 5, rng);
  const auto report = grad_check(m, x, labels_for(3, 4));
  EXPECT_TRUE(report.passed()) << to_string(v) << " max error " << report.max_error();
  EXPECT_NE(report.find("probe.weight"), nullptr);
  EXPECT_EQ(report.find("radii") != nullptr, uses_hierarchy(v));
}

INSTANTIATE_TEST_SUITE_P(AllVariants, GradCheckVariants, ::testing::ValuesIn(kAllVariants),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(GradCheck, MissingPullBackFailsOnDeltaOnly) {
  Model m(small_config(Variant::hierarchy), fruit_animal_tree(), 31);
  Rng rng(32);
  const Matrix x = random_matrix(4, 5, rng);
  const auto corrupted = [](const Model& model, const Matrix& xs, std::span<const int> ys) {
    auto r = model.loss_and_grads(xs, ys);
    // use grad_W directly on the leaf columns instead of grad_W H^T D
    r.grads.delta.setZero();
    r.grads.delta.rightCols(r.grad_w.cols()) = r.grad_w;
    return r.grads;
  };
  const auto report = grad_check(m, x, labels_for(4, 4), 1e-5, 1e-5, corrupted);
  EXPECT_FALSE(report.passed());
  for (const auto& e : report.entries) {
    if (e.tensor == "delta") {
      EXPECT_GT(e.max_rel_error, 1e-2);
    } else {
      EXPECT_LT(e.max_rel_error, 1e-5) << e.tensor;
    }
  }
}

TEST(GradCheck, SingleClassIsTrivial) {
  const auto t = parse_hierarchy_string("1\n1 0\n");
  Model m(small_config(Variant::riemann), t, 1);
  Rng rng(2);
  const auto report = grad_check(m, random_matrix(2, 5, rng), std::vector<int>{0, 0});
  EXPECT_TRUE(report.passed());
  EXPECT_EQ(report.max_error(), 0.0);
}

TEST(SuperclassLogits, PlainThrowsAndShapes) {
  const auto t = fruit_animal_tree();
  Rng rng(40);
  const Matrix x = random_matrix(3, 5, rng);
  EXPECT_THROW(Model(small_config(Variant::plain), t, 1).superclass_logits(x), std::logic_error);
  for (Variant v : {Variant::multitask, Variant::hierarchy, Variant::manifold, Variant::riemann}) {
    const Matrix s = Model(small_config(v), t, 1).superclass_logits(x);
    EXPECT_EQ(s.rows(), 3);
    EXPECT_EQ(s.cols(), 2);
  }
}

TEST(SuperclassLogits, ParentOfPredictedLeafMatchesPathWalk) {
  const int branching[] = {3, 3};
  const auto t = layered_tree(branching);
  Model m(small_config(Variant::riemann), t, 41);
  TreeIndex index(t);
  Rng rng(42);
  const Matrix x = random_matrix(5, 5, rng);
  const auto leaf = argmax_rows(m.forward(x));
  const Matrix s = m.superclass_logits(x);
  const Matrix f = m.features(x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const NodeId parent = *index.parent(t.l_order[static_cast<std::size_t>(leaf[static_cast<std::size_t>(i)])]);
    const auto row = static_cast<Eigen::Index>(index.p_index(parent));
    const double walked = f.row(i).dot(m.radii()(row) * m.params().delta.col(row));
    EXPECT_NEAR(s(i, m.super_of_label()[static_cast<std::size_t>(leaf[static_cast<std::size_t>(i)])]), walked, 1e-12);
  }
}

TEST(Probe, AttachKeepsLogitShape) {
  Model m(small_config(Variant::riemann), fruit_animal_tree(), 50);
  Rng rng(51);
  const Matrix x = random_matrix(3, 5, rng);
  m.attach_2d_probe(52);
  EXPECT_EQ(m.forward(x).rows(), 3);
  EXPECT_EQ(m.forward(x).cols(), 4);
  EXPECT_EQ(m.features(x).cols(), 2);
  EXPECT_EQ(m.params().delta.rows(), 2);
  EXPECT_THROW(m.attach_2d_probe(53), std::logic_error);
}

TEST(ArgmaxRows, TiesGoToLowestIndex) {
  Matrix m(3, 4);
  m << 0, 0, 0, 0,
       1, 3, 3, 2,
       -1, -2, -1, -5;
  EXPECT_EQ(argmax_rows(m), (std::vector<int>{0, 1, 0}));
}

TEST(Model, DeterministicInitialization) {
  const auto t = fruit_animal_tree();
  for (Variant v : kAllVariants) {
    Model a(small_config(v), t, 77);
    Model b(small_config(v), t, 77);
    auto ta = a.params().tensors();
    auto tb = b.params().tensors();
    ASSERT_EQ(ta.size(), tb.size());
    for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(*ta[k].second, *tb[k].second) << ta[k].first;
  }
}
