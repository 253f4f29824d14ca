#pragma once

// IoU, training-label assignment for detected boxes, Frame AP and scene-graph
// Recall@K.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "stgraph/error.hpp"
#include "stgraph/graph.hpp"
#include "stgraph/heads.hpp"

namespace stgraph {

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Label assignment.

struct GroundTruthBox {
  Box box;
  std::vector<int> classes;  // active action classes
};

struct LabeledSample {
  Box box;
  std::vector<int> labels;  // binary, one entry per class
  bool ground_truth = false;
};

inline constexpr double kLabelAssignmentIou = 0.75;

/// Ground-truth boxes become positive samples; each predicted box inherits
/// the classes of its best-IoU ground truth when that IoU reaches `threshold`
/// (first ground truth wins ties) and is negative for every class otherwise.
/// Output order: ground truth first, then predictions in input order.
inline std::vector<LabeledSample> assign_labels(std::span<const Box> predicted, std::span<const GroundTruthBox> gts,
                                                int num_classes, double threshold = kLabelAssignmentIou) {
  auto binary = [&](const std::vector<int>& classes) {
    std::vector<int> labels(static_cast<std::size_t>(num_classes), 0);
    for (int c : classes) {
      if (c < 0 || c >= num_classes) throw ValidationError("action class " + std::to_string(c) + " out of range");
      labels[static_cast<std::size_t>(c)] = 1;
    }
    return labels;
  };
  std::vector<LabeledSample> out;
  for (const auto& gt : gts) out.push_back({gt.box, binary(gt.classes), true});
  for (const auto& box : predicted) {
    double best = -1.0;
    const GroundTruthBox* match = nullptr;
    for (const auto& gt : gts) {
      const double overlap = iou(box, gt.box);
      if (overlap > best) {
        best = overlap;
        match = &gt;
      }
    }
    if (match && best >= threshold) {
      out.push_back({box, binary(match->classes), false});
    } else {
      out.push_back({box, std::vector<int>(static_cast<std::size_t>(num_classes), 0), false});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frame AP.

struct DetectionRecord {
  std::string clip_id;
  int keyframe_id = 0;
  Box box;
  int class_id = 0;
  double score = 0.0;
};

struct GroundTruthRecord {
  std::string clip_id;
  int keyframe_id = 0;
  Box box;
  int class_id = 0;
};

struct FrameApResult {
  std::vector<std::optional<double>> per_class;  // nullopt for classes without ground truth
  double mean_ap = 0.0;
};

/// All-point interpolated AP from a ranked list of true/false positive flags.
inline double average_precision(const std::vector<bool>& ranked_hits, std::size_t positives) {
  if (positives == 0) throw ContractError("average_precision: no positives");
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked_hits.size(); ++i) {
    tp += ranked_hits[i];
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Per-class AP at `iou_threshold`: predictions ranked by descending score
/// (stable in input order), each greedily matched to the best unmatched ground
/// truth of its clip/keyframe/class. The mean covers classes with ground truth.
inline FrameApResult frame_ap(const std::vector<DetectionRecord>& preds, const std::vector<GroundTruthRecord>& gts,
                              int num_classes, double iou_threshold = 0.5) {
  using Key = std::tuple<std::string, int, int>;
  std::map<Key, std::vector<std::size_t>> gt_index;
  std::vector<std::size_t> positives(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto& g = gts[i];
    if (g.class_id < 0 || g.class_id >= num_classes)
      throw ValidationError("ground-truth class " + std::to_string(g.class_id) + " out of range");
    gt_index[{g.clip_id, g.keyframe_id, g.class_id}].push_back(i);
    ++positives[static_cast<std::size_t>(g.class_id)];
  }

  FrameApResult result;
  result.per_class.resize(static_cast<std::size_t>(num_classes));
  double total = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (positives[static_cast<std::size_t>(c)] == 0) continue;
    std::vector<const DetectionRecord*> ranked;
    for (const auto& p : preds)
      if (p.class_id == c) ranked.push_back(&p);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const DetectionRecord* a, const DetectionRecord* b) { return a->score > b->score; });
    std::vector<bool> matched(gts.size(), false);
    std::vector<bool> hits;
    for (const auto* p : ranked) {
      double best = -1.0;
      std::optional<std::size_t> best_gt;
      if (auto it = gt_index.find({p->clip_id, p->keyframe_id, c}); it != gt_index.end()) {
        for (auto gi : it->second) {
          if (matched[gi]) continue;
          const double overlap = iou(p->box, gts[gi].box);
          if (overlap > best) {
            best = overlap;
            best_gt = gi;
          }
        }
      }
      const bool hit = best_gt && best >= iou_threshold;
      if (hit) matched[*best_gt] = true;
      hits.push_back(hit);
    }
    const double ap = average_precision(hits, positives[static_cast<std::size_t>(c)]);
    result.per_class[static_cast<std::size_t>(c)] = ap;
    total += ap;
    ++counted;
  }
  if (counted == 0) throw ContractError("frame_ap: no ground truth for any class, mAP undefined");
  result.mean_ap = total / counted;
  return result;
}

// ---------------------------------------------------------------------------
// Scene-graph Recall@K.

enum class SceneGraphMode { SGCls, PredCls };

struct Triplet {
  int subject_index = 0;
  int object_index = 0;
  int subject_class = 0;
  int object_class = 0;
  int predicate_class = 0;
  double score = 0.0;
};

struct RelationTruth {
  int subject = 0;
  int object = 0;
  int predicate = 0;
};

/// Ground truth for one keyframe: object class per foreground node and the
/// annotated relations between them.
struct SceneGraphTruth {
  std::vector<int> object_classes;
  std::vector<RelationTruth> relations;
};

inline double triplet_score(double subject_prob, double predicate_prob, double object_prob) {
  return subject_prob * predicate_prob * object_prob;
}

/// Top-K candidate triplets. Candidates cover every unordered pair i > j
/// (subject i, object j) and every predicate. Object classes and their
/// probabilities come from the softmax argmax (SGCls) or the ground truth with
/// probability 1 (PredCls).
inline std::vector<Triplet> top_triplets(const SceneGraphPrediction& pred, const SceneGraphTruth& truth, int k,
                                         SceneGraphMode mode) {
  if (k <= 0) throw ConfigError("Recall@K needs K > 0, got " + std::to_string(k));
  const std::size_t n = pred.nodes();
  std::vector<int> classes(n);
  std::vector<double> probs(n, 1.0);
  if (mode == SceneGraphMode::PredCls) {
    if (truth.object_classes.size() != n) throw ContractError("ground-truth classes do not match node count");
    for (std::size_t i = 0; i < n; ++i) classes[i] = truth.object_classes[i];
  } else {
    const auto softmax = ng::kernels::softmax_rows(pred.object_logits);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = softmax.row_span(i);
      const auto best = std::max_element(row.begin(), row.end());
      classes[i] = static_cast<int>(best - row.begin());
      probs[i] = *best;
    }
  }
  std::vector<Triplet> candidates;
  const auto pairs = node_pairs(n);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    for (std::size_t r = 0; r < pred.relation_classes(); ++r) {
      const double pred_prob = ng::kernels::sigmoid(pred.relation_logits(p, r));
      candidates.push_back({static_cast<int>(i), static_cast<int>(j), classes[i], classes[j], static_cast<int>(r),
                            triplet_score(probs[i], pred_prob, probs[j])});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Triplet& a, const Triplet& b) { return a.score > b.score; });
  if (candidates.size() > static_cast<std::size_t>(k)) candidates.resize(static_cast<std::size_t>(k));
  return candidates;
}

/// Fraction of ground-truth triplets found in the top K. A match needs the
/// same node pair (either direction, the relation head is symmetric in the
/// pair), the same predicate and both object classes correct. Returns nullopt
/// when there is no ground-truth triplet.
inline std::optional<double> recall_at_k_or_empty(const SceneGraphPrediction& pred, const SceneGraphTruth& truth, int k,
                                                  SceneGraphMode mode) {
  const auto top = top_triplets(pred, truth, k, mode);
  if (truth.relations.empty()) return std::nullopt;
  std::size_t found = 0;
  for (const auto& rel : truth.relations) {
    const auto s = static_cast<std::size_t>(rel.subject), o = static_cast<std::size_t>(rel.object);
    if (s >= truth.object_classes.size() || o >= truth.object_classes.size())
      throw ValidationError("relation references a missing node");
    const bool hit = std::any_of(top.begin(), top.end(), [&](const Triplet& t) {
      const bool same_pair = (t.subject_index == rel.subject && t.object_index == rel.object) ||
                             (t.subject_index == rel.object && t.object_index == rel.subject);
      if (!same_pair || t.predicate_class != rel.predicate) return false;
      const int cls_s = t.subject_index == rel.subject ? t.subject_class : t.object_class;
      const int cls_o = t.subject_index == rel.subject ? t.object_class : t.subject_class;
      return cls_s == truth.object_classes[s] && cls_o == truth.object_classes[o];
    });
    found += hit;
  }
  return static_cast<double>(found) / static_cast<double>(truth.relations.size());
}

/// Recall@K with the vacuous case (no ground-truth triplets) counted as 1.0.
inline double recall_at_k(const SceneGraphPrediction& pred, const SceneGraphTruth& truth, int k, SceneGraphMode mode) {
  return recall_at_k_or_empty(pred, truth, k, mode).value_or(1.0);
}

enum class EmptyTruthPolicy { CountAsOne, Skip };

/// Mean of per-keyframe recalls.
inline double mean_recall_at_k(const std::vector<SceneGraphPrediction>& preds, const std::vector<SceneGraphTruth>& truths,
                               int k, SceneGraphMode mode, EmptyTruthPolicy policy = EmptyTruthPolicy::CountAsOne) {
  if (preds.size() != truths.size()) throw ContractError("mean_recall_at_k: prediction/truth count mismatch");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto r = recall_at_k_or_empty(preds[i], truths[i], k, mode);
    if (!r && policy == EmptyTruthPolicy::Skip) continue;
    total += r.value_or(1.0);
    ++counted;
  }
  return counted == 0 ? 1.0 : total / static_cast<double>(counted);
}

}  // namespace stgraph
