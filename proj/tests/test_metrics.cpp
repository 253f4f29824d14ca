#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "stgraph/metrics.hpp"
#include "support.hpp"

using namespace stgraph;

namespace {

/// Interpolated AP by enumerating every operating point of the ranking: for
/// each distinct recall level take the best precision achievable at that
/// recall or beyond, and integrate over recall steps.
double ap_by_enumeration(const std::vector<bool>& hits, std::size_t positives) {
  struct Point {
    double recall, precision;
  };
  std::vector<Point> pts;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i];
    pts.push_back({double(tp) / positives, double(tp) / double(i + 1)});
  }
  double ap = 0.0, last = 0.0;
  for (std::size_t k = 1; k <= positives; ++k) {
    const double level = double(k) / positives;
    double best = 0.0;
    for (const auto& p : pts)
      if (p.recall >= level - 1e-12) best = std::max(best, p.precision);
    ap += (level - last) * best;
    last = level;
  }
  return ap;
}

DetectionRecord det(const std::string& clip, int kf, Box b, int cls, double score) {
  return {clip, kf, b, cls, score};
}

}  // namespace

TEST(Iou, Cases) {
  const Box a{0, 0, 1, 1};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{2, 2, 3, 3}), 0.0);
  EXPECT_EQ(iou(a, Box{1, 0, 2, 1}), 0.0);  // touching edges
  EXPECT_NEAR(iou(a, Box{0.5, 0, 1.5, 1}), 0.5 / 1.5, 1e-15);
  EXPECT_NEAR(iou(Box{0, 0, 0.5, 0.5}, a), 0.25, 1e-15);
  EXPECT_EQ(iou(Box{0.2, 0.3, 0.6, 0.9}, Box{0.1, 0.1, 0.7, 0.4}), iou(Box{0.1, 0.1, 0.7, 0.4}, Box{0.2, 0.3, 0.6, 0.9}));
}

TEST(AssignLabels, GroundTruthFirstThenMatchedPredictions) {
  const std::vector<GroundTruthBox> gts{{{0, 0, 0.5, 0.5}, {1}}, {{0.5, 0.5, 1, 1}, {0, 2}}};
  const std::vector<Box> preds{{0.5, 0.5, 1, 0.95}, {0, 0, 0.5, 0.3}, {0.2, 0.2, 0.8, 0.8}};
  const auto out = assign_labels(preds, gts, 3);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_TRUE(out[0].ground_truth);
  EXPECT_TRUE(out[1].ground_truth);
  EXPECT_EQ(out[0].labels, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(out[1].labels, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(out[2].labels, (std::vector<int>{1, 0, 1}));  // IoU 0.9 with the second box
  EXPECT_EQ(out[3].labels, (std::vector<int>{0, 0, 0}));  // IoU 0.6 < 0.75
  EXPECT_EQ(out[4].labels, (std::vector<int>{0, 0, 0}));
  EXPECT_FALSE(out[4].ground_truth);
}

TEST(AssignLabels, ThresholdIsInclusive) {
  const std::vector<GroundTruthBox> gts{{{0, 0, 1, 1}, {0}}};
  const std::vector<Box> preds{{0, 0, 0.75, 1}};
  EXPECT_EQ(assign_labels(preds, gts, 1)[1].labels, std::vector<int>{1});
  EXPECT_THROW(assign_labels(preds, std::vector<GroundTruthBox>{{{0, 0, 1, 1}, {3}}}, 2), ValidationError);
}

TEST(AveragePrecision, HandCase) {
  // two ground truths, ranked predictions TP (0.9), FP (0.6), TP (0.3)
  const std::vector<bool> hits{true, false, true};
  EXPECT_NEAR(average_precision(hits, 2), ap_by_enumeration(hits, 2), 1e-15);
  EXPECT_NEAR(average_precision(hits, 2), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
}

TEST(AveragePrecision, MatchesEnumerationOnRandomRankings) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<bool> hits(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) tp += hits[i] = rng() % 2;
    const std::size_t positives = tp + rng() % 3;
    if (positives == 0) continue;
    EXPECT_NEAR(average_precision(hits, positives), ap_by_enumeration(hits, positives), 1e-12);
  }
  EXPECT_THROW(average_precision({true}, 0), ContractError);
}

TEST(FrameAp, HandCaseThroughBoxes) {
  const Box g1{0, 0, 0.4, 0.4}, g2{0.5, 0.5, 1, 1};
  const std::vector<GroundTruthRecord> gts{{"a", 0, g1, 0}, {"a", 0, g2, 0}};
  const std::vector<DetectionRecord> preds{det("a", 0, g1, 0, 0.9), det("a", 0, {0.4, 0, 0.6, 0.2}, 0, 0.6),
                                           det("a", 0, g2, 0, 0.3)};
  const auto r = frame_ap(preds, gts, 2);
  ASSERT_TRUE(r.per_class[0].has_value());
  EXPECT_FALSE(r.per_class[1].has_value());
  EXPECT_NEAR(*r.per_class[0], ap_by_enumeration({true, false, true}, 2), 1e-15);
  EXPECT_NEAR(r.mean_ap, *r.per_class[0], 1e-15);
}

TEST(FrameAp, DuplicateDetectionIsFalsePositiveAndKeyframesAreSeparate) {
  const Box g{0, 0, 0.5, 0.5};
  const std::vector<GroundTruthRecord> gts{{"a", 0, g, 0}, {"a", 1, g, 0}};
  const std::vector<DetectionRecord> preds{det("a", 0, g, 0, 0.9), det("a", 0, g, 0, 0.8), det("a", 1, g, 0, 0.7)};
  EXPECT_NEAR(frame_ap(preds, gts, 1).mean_ap, ap_by_enumeration({true, false, true}, 2), 1e-15);
  const std::vector<DetectionRecord> other_clip{det("b", 0, g, 0, 0.9)};
  EXPECT_EQ(frame_ap(other_clip, gts, 1).mean_ap, 0.0);
}

TEST(FrameAp, InvariantUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<GroundTruthRecord> gts;
  std::vector<DetectionRecord> preds;
  for (int k = 0; k < 6; ++k) {
    const auto b = testing_support::random_cell_box(4, 4, rng);
    gts.push_back({"c", k, b, static_cast<int>(rng() % 3)});
    for (int j = 0; j < 3; ++j)
      preds.push_back(det("c", k, testing_support::random_cell_box(4, 4, rng), static_cast<int>(rng() % 3), u(rng)));
    preds.push_back(det("c", k, b, gts.back().class_id, u(rng)));
  }
  auto transformed = preds;
  for (auto& p : transformed) p.score = std::exp(3 * p.score) - 7;
  const auto a = frame_ap(preds, gts, 3), b = frame_ap(transformed, gts, 3);
  EXPECT_EQ(a.mean_ap, b.mean_ap);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(a.per_class[c], b.per_class[c]);
}

TEST(FrameAp, PerfectRankingScoresOne) {
  const std::vector<GroundTruthRecord> gts{{"a", 0, {0, 0, 0.5, 0.5}, 0}, {"a", 0, {0.5, 0.5, 1, 1}, 1}};
  const std::vector<DetectionRecord> preds{det("a", 0, {0, 0, 0.5, 0.5}, 0, 0.9), det("a", 0, {0.5, 0.5, 1, 1}, 1, 0.8),
                                           det("a", 0, {0.5, 0.5, 1, 1}, 0, 0.1)};
  EXPECT_EQ(frame_ap(preds, gts, 2).mean_ap, 1.0);
}

TEST(FrameAp, NoGroundTruthIsContractError) {
  EXPECT_THROW(frame_ap({det("a", 0, {0, 0, 1, 1}, 0, 1)}, {}, 2), ContractError);
  EXPECT_THROW(frame_ap({}, {{"a", 0, {0, 0, 1, 1}, 5}}, 2), ValidationError);
}

TEST(TripletScore, IsProduct) {
  EXPECT_EQ(triplet_score(0.5, 0.4, 0.25), 0.05);
  EXPECT_EQ(triplet_score(1, 1, 1), 1.0);
}

namespace {

SceneGraphPrediction two_node_prediction(const std::vector<double>& obj0, const std::vector<double>& obj1,
                                         const std::vector<double>& rel) {
  SceneGraphPrediction p;
  p.object_logits = Tensor({2, obj0.size()}, [&] {
    auto v = obj0;
    v.insert(v.end(), obj1.begin(), obj1.end());
    return v;
  }());
  p.relation_logits = Tensor({1, rel.size()}, rel);
  return p;
}

/// Brute-force Recall@K for a two-node graph: list all predicate candidates
/// with explicit score products, rank them, and check the truth by hand.
double brute_recall_two_nodes(const SceneGraphPrediction& p, const SceneGraphTruth& t, int k, bool predcls) {
  auto argmax_prob = [&](std::size_t i) {
    std::vector<double> e;
    double sum = 0;
    for (std::size_t c = 0; c < p.object_logits.cols(); ++c) sum += e.emplace_back(std::exp(p.object_logits(i, c)));
    const auto it = std::max_element(e.begin(), e.end());
    return std::pair{static_cast<int>(it - e.begin()), *it / sum};
  };
  auto [c0, p0] = argmax_prob(0);
  auto [c1, p1] = argmax_prob(1);
  if (predcls) {
    c0 = t.object_classes[0];
    c1 = t.object_classes[1];
    p0 = p1 = 1.0;
  }
  std::vector<std::pair<double, int>> cand;
  for (std::size_t r = 0; r < p.relation_logits.cols(); ++r)
    cand.push_back({-(p0 * p1 / (1 + std::exp(-p.relation_logits(0, r)))), static_cast<int>(r)});
  std::stable_sort(cand.begin(), cand.end(), [](auto& a, auto& b) { return a.first < b.first; });
  int found = 0;
  for (const auto& rel : t.relations) {
    bool hit = false;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(cand.size())); ++i)
      hit |= cand[static_cast<std::size_t>(i)].second == rel.predicate && c0 == t.object_classes[0] &&
             c1 == t.object_classes[1];
    found += hit;
  }
  return t.relations.empty() ? 1.0 : double(found) / t.relations.size();
}

}  // namespace

TEST(Recall, TwoNodesThreePredicatesTopOne) {
  const auto pred = two_node_prediction({2, 0}, {0, 1}, {0.1, 2.0, -1.0});
  SceneGraphTruth right{{0, 1}, {{1, 0, 1}}};
  SceneGraphTruth wrong_pred{{0, 1}, {{1, 0, 2}}};
  SceneGraphTruth wrong_class{{1, 1}, {{1, 0, 1}}};
  for (auto mode : {SceneGraphMode::SGCls, SceneGraphMode::PredCls}) {
    const bool pc = mode == SceneGraphMode::PredCls;
    for (const auto* t : {&right, &wrong_pred, &wrong_class})
      EXPECT_EQ(recall_at_k(pred, *t, 1, mode), brute_recall_two_nodes(pred, *t, 1, pc));
  }
  EXPECT_EQ(recall_at_k(pred, right, 1, SceneGraphMode::SGCls), 1.0);
  EXPECT_EQ(recall_at_k(pred, wrong_pred, 1, SceneGraphMode::SGCls), 0.0);
  EXPECT_EQ(recall_at_k(pred, wrong_pred, 3, SceneGraphMode::SGCls), 1.0);
  EXPECT_EQ(recall_at_k(pred, wrong_class, 1, SceneGraphMode::SGCls), 0.0);
  EXPECT_EQ(recall_at_k(pred, wrong_class, 1, SceneGraphMode::PredCls), 1.0);
}

TEST(Recall, RandomTwoNodeCasesMatchBruteForce) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pred = two_node_prediction({n(rng), n(rng), n(rng)}, {n(rng), n(rng), n(rng)}, {n(rng), n(rng), n(rng)});
    SceneGraphTruth t{{static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)}, {}};
    for (int r = 0; r < 3; ++r)
      if (rng() % 2) t.relations.push_back({0, 1, r});
    for (int k : {1, 2, 3})
      for (auto mode : {SceneGraphMode::SGCls, SceneGraphMode::PredCls})
        EXPECT_NEAR(recall_at_k(pred, t, k, mode), brute_recall_two_nodes(pred, t, k, mode == SceneGraphMode::PredCls),
                    1e-15);
  }
}

TEST(Recall, MonotoneInKAndBoundedByOne) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t nodes = 2 + rng() % 4, c = 4, r = 3;
    SceneGraphPrediction p;
    p.object_logits = testing_support::random_tensor(nodes, c, rng, -2, 2);
    p.relation_logits = testing_support::random_tensor(nodes * (nodes - 1) / 2, r, rng, -2, 2);
    SceneGraphTruth t;
    for (std::size_t i = 0; i < nodes; ++i) t.object_classes.push_back(static_cast<int>(rng() % c));
    t.relations.push_back({1, 0, static_cast<int>(rng() % r)});
    t.relations.push_back({0, static_cast<int>(nodes - 1), static_cast<int>(rng() % r)});
    for (auto mode : {SceneGraphMode::SGCls, SceneGraphMode::PredCls}) {
      double prev = 0.0;
      for (int k = 1; k <= 30; ++k) {
        const double v = recall_at_k(p, t, k, mode);
        EXPECT_GE(v, prev);
        EXPECT_LE(v, 1.0);
        prev = v;
      }
    }
    // every candidate is listed at K = pairs * predicates, so PredCls finds everything
    EXPECT_EQ(recall_at_k(p, t, static_cast<int>(nodes * (nodes - 1) / 2 * r), SceneGraphMode::PredCls), 1.0);
  }
}

TEST(Recall, InvalidKAndEmptyTruth) {
  const auto pred = two_node_prediction({1, 0}, {0, 1}, {0.5});
  const SceneGraphTruth t{{0, 1}, {{0, 1, 0}}};
  EXPECT_THROW(recall_at_k(pred, t, 0, SceneGraphMode::SGCls), ConfigError);
  EXPECT_THROW(recall_at_k(pred, t, -5, SceneGraphMode::PredCls), ConfigError);
  const SceneGraphTruth empty{{0, 1}, {}};
  EXPECT_EQ(recall_at_k(pred, empty, 1, SceneGraphMode::SGCls), 1.0);
  EXPECT_FALSE(recall_at_k_or_empty(pred, empty, 1, SceneGraphMode::SGCls).has_value());
  const std::vector<SceneGraphPrediction> preds{pred, pred};
  const std::vector<SceneGraphTruth> truths{t, empty};
  EXPECT_EQ(mean_recall_at_k(preds, truths, 1, SceneGraphMode::PredCls), 1.0);
  EXPECT_EQ(mean_recall_at_k(preds, truths, 1, SceneGraphMode::PredCls, EmptyTruthPolicy::Skip), 1.0);
}
