#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stgraph/heads.hpp"
#include "support.hpp"

using namespace stgraph;
using testing_support::random_tensor;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double bce_ref(double x, double y) { return -(y * std::log(sigmoid_ref(x)) + (1 - y) * std::log(1 - sigmoid_ref(x))); }

Tensor row(std::initializer_list<double> v) { return Tensor({1, v.size()}, std::vector<double>(v)); }

}  // namespace

TEST(ActionLoss, HandCase) {
  const double loss = action_loss(row({1.0, -1.0}), row({1.0, 0.0}));
  EXPECT_NEAR(loss, std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(loss, 0.31326168751822286, 1e-15);
}

TEST(ActionLoss, ZeroLogitsGiveLogTwo) {
  for (auto y : {row({0, 0, 0}), row({1, 1, 1}), row({1, 0, 1})})
    EXPECT_NEAR(action_loss(Tensor::zeros(1, 3), y), std::log(2.0), 1e-15);
}

TEST(ActionLoss, SumsOverNodesAndAveragesOverClasses) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor(4, 3, rng, -3, 3);
  Tensor y = Tensor::zeros(4, 3);
  y(0, 1) = y(2, 0) = y(2, 2) = y(3, 1) = 1;
  double expected = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) expected += bce_ref(x(i, c), y(i, c)) / 3.0;
  EXPECT_NEAR(action_loss(x, y), expected, 1e-13);
}

TEST(ActionLoss, GradientIsSigmoidMinusLabelOverClasses) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor(2, 4, rng, -2, 2);
  Tensor y = Tensor::zeros(2, 4);
  y(0, 0) = y(1, 3) = y(1, 1) = 1;
  ng::Tape tape;
  const auto v = tape.parameter("x", x);
  tape.backward(action_loss(v, y));
  const auto g = tape.gradient("x");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(g(i, c), (sigmoid_ref(x(i, c)) - y(i, c)) / 4.0, 1e-15);
}

TEST(ActionReadout, IsAffinePerNode) {
  std::mt19937_64 rng(3);
  const auto h = random_tensor(3, 4, rng), w = random_tensor(4, 2, rng), b = random_tensor(1, 2, rng);
  ng::Tape tape(false);
  const auto out = action_readout(tape.constant(h), tape.constant(w), tape.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = b(0, c);
      for (std::size_t k = 0; k < 4; ++k) s += h(i, k) * w(k, c);
      EXPECT_NEAR(out(i, c), s, 1e-15);
    }
}

TEST(Pairs, OrderAndIndex) {
  const auto pairs = node_pairs(4);
  ASSERT_EQ(pairs.size(), 6u);
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{1, 0}, {2, 0}, {2, 1}, {3, 0}, {3, 1}, {3, 2}};
  EXPECT_EQ(pairs, expected);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    EXPECT_EQ(pair_index(pairs[p].first, pairs[p].second), p);
    EXPECT_EQ(pair_index(pairs[p].second, pairs[p].first), p);
  }
  EXPECT_THROW(pair_index(2, 2), ContractError);
  EXPECT_TRUE(node_pairs(1).empty());
}

TEST(SceneGraphReadout, RelationRowsConcatenatePair) {
  std::mt19937_64 rng(4);
  const std::size_t n = 3, d = 2;
  const auto h = random_tensor(n, d, rng);
  const auto ow = random_tensor(d, 4, rng), ob = random_tensor(1, 4, rng);
  const auto rw = random_tensor(2 * d, 3, rng), rb = random_tensor(1, 3, rng);
  ng::Tape tape(false);
  const auto out = sg_readout(tape.constant(h), {tape.constant(ow), tape.constant(ob), tape.constant(rw),
                                                 tape.constant(rb)});
  const auto& rel = out.relation_logits.value();
  ASSERT_EQ(rel.rows(), 3u);
  for (auto [i, j] : node_pairs(n)) {
    for (std::size_t r = 0; r < 3; ++r) {
      double s = rb(0, r);
      for (std::size_t k = 0; k < d; ++k) s += h(i, k) * rw(k, r) + h(j, k) * rw(d + k, r);
      EXPECT_NEAR(rel(pair_index(i, j), r), s, 1e-15);
    }
  }
  ng::Tape single(false);
  const auto one = sg_readout(single.constant(random_tensor(1, d, rng)),
                              {single.constant(ow), single.constant(ob), single.constant(rw), single.constant(rb)});
  EXPECT_FALSE(one.relation_logits.valid());
}

TEST(SceneGraphLoss, MatchesFormula) {
  std::mt19937_64 rng(5);
  const std::size_t n = 2, c = 3, r = 2;
  const auto obj = random_tensor(n, c, rng, -2, 2), rel = random_tensor(1, r, rng, -2, 2);
  Tensor y = Tensor::zeros(n, c), z = Tensor::zeros(1, r);
  y(0, 2) = y(1, 0) = 1;
  z(0, 1) = 1;
  const double lambda = 0.5;
  double object = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < c; ++k) norm += std::exp(obj(i, k));
    for (std::size_t k = 0; k < c; ++k)
      if (y(i, k) == 1) object += -std::log(std::exp(obj(i, k)) / norm);
  }
  object /= n;
  double relation = 0.0;
  for (std::size_t k = 0; k < r; ++k) relation += bce_ref(rel(0, k), z(0, k));
  relation /= (n * (n - 1) / 2.0) * r;
  EXPECT_NEAR(sg_loss(obj, rel, y, z, lambda), lambda * object + relation, 1e-14);
}

TEST(SceneGraphLoss, ZeroLambdaIgnoresObjectLabels) {
  std::mt19937_64 rng(6);
  const auto obj = random_tensor(3, 4, rng), rel = random_tensor(3, 2, rng);
  Tensor y1 = Tensor::zeros(3, 4), y2 = Tensor::zeros(3, 4), z = Tensor::zeros(3, 2);
  y1(0, 0) = y1(1, 1) = y1(2, 2) = 1;
  y2(0, 3) = y2(1, 3) = y2(2, 3) = 1;
  z(1, 0) = 1;
  EXPECT_EQ(sg_loss(obj, rel, y1, z, 0.0), sg_loss(obj, rel, y2, z, 0.0));
  EXPECT_NE(sg_loss(obj, rel, y1, z, 0.5), sg_loss(obj, rel, y2, z, 0.5));
}

TEST(SceneGraphLoss, SingleNodeHasNoRelationTerm) {
  const auto obj = row({0.5, -0.5, 1.0});
  Tensor y = Tensor::zeros(1, 3);
  y(0, 2) = 1;
  const double norm = std::exp(0.5) + std::exp(-0.5) + std::exp(1.0);
  EXPECT_NEAR(sg_loss(obj, Tensor(), y, Tensor(), 0.5), 0.5 * -std::log(std::exp(1.0) / norm), 1e-15);
}

TEST(SceneGraphLoss, NonOneHotLabelsAreRejected) {
  const auto obj = Tensor::zeros(2, 3), rel = Tensor::zeros(1, 2), z = Tensor::zeros(1, 2);
  Tensor two = Tensor::zeros(2, 3);
  two(0, 0) = two(0, 1) = two(1, 2) = 1;
  EXPECT_THROW(sg_loss(obj, rel, two, z, 0.5), ValidationError);
  Tensor none = Tensor::zeros(2, 3);
  none(0, 0) = 1;
  EXPECT_THROW(sg_loss(obj, rel, none, z, 0.5), ValidationError);
  Tensor half = Tensor::zeros(2, 3);
  half(0, 0) = half(1, 0) = 1;
  Tensor bad_z = Tensor::zeros(1, 2);
  bad_z(0, 0) = 0.5;
  EXPECT_THROW(sg_loss(obj, rel, half, bad_z, 0.5), ValidationError);
}

TEST(SceneGraphLoss, GradientAgreesWithFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor y = Tensor::zeros(3, 4), z = Tensor::zeros(3, 2);
  y(0, 1) = y(1, 0) = y(2, 3) = 1;
  z(0, 1) = z(2, 0) = 1;
  EXPECT_LT(testing_support::max_fd_error({random_tensor(3, 4, rng), random_tensor(3, 2, rng)},
                                          [&](ng::Tape&, const std::vector<ng::Var>& v) {
                                            return sg_loss(v[0], v[1], y, z, 0.7);
                                          }),
            1e-4);
}
