#pragma once

// End-to-end model over one clip: graph construction from a record, message
// passing, readout and loss, plus dataset-level evaluation.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "stgraph/config.hpp"
#include "stgraph/dataset.hpp"
#include "stgraph/graph.hpp"
#include "stgraph/heads.hpp"
#include "stgraph/metrics.hpp"
#include "stgraph/numgrad.hpp"
#include "stgraph/parallel.hpp"
#include "stgraph/passing.hpp"

namespace stgraph {

enum class Mode { Train, Eval };

/// A clip turned into a graph plus per-keyframe targets.
struct ClipSample {
  std::string clip_id;
  SpatioTemporalGraph graph;
  std::vector<int> keyframe_ids;             // per keyframe group
  std::vector<std::vector<Box>> boxes;       // foreground boxes per group, node order
  std::vector<Tensor> action_labels;         // n x C per group
  std::vector<Tensor> object_labels;         // N x C_obj one-hot per group
  std::vector<Tensor> relation_labels;       // N(N-1)/2 x R per group
  std::vector<SceneGraphTruth> scene_truth;  // per group
};

/// Checks that a dataset can feed a model built from `config`.
inline void check_dataset(const Dataset& ds, const ModelConfig& config) {
  if (ds.header.task != config.task) {
    throw ValidationError("dataset task is " + std::string(to_string(ds.header.task)) + ", model task is " +
                          std::string(to_string(config.task)));
  }
  if (config.task == Task::Action && ds.header.num_action_classes != config.num_action_classes) {
    throw ValidationError("dataset has " + std::to_string(ds.header.num_action_classes) +
                          " action classes, model expects " + std::to_string(config.num_action_classes));
  }
  if (config.task == Task::SceneGraph && (ds.header.num_object_classes != config.num_object_classes ||
                                          ds.header.num_relation_classes != config.num_relation_classes)) {
    throw ValidationError("dataset object/relation class counts differ from the model's");
  }
  const auto shape = dataset_grid_shape(ds);
  if (shape[2] != static_cast<std::size_t>(config.channels)) {
    throw ValidationError("dataset grids have " + std::to_string(shape[2]) + " channels, model expects " +
                          std::to_string(config.channels));
  }
}

/// Training uses ground-truth boxes plus detections labelled by IoU matching;
/// evaluation uses detections when a keyframe has any, ground truth otherwise.
inline ClipSample prepare_clip(const ClipRecord& clip, const ModelConfig& config, Mode mode) {
  ClipSample sample;
  sample.clip_id = clip.clip_id;
  std::vector<KeyframeInput> inputs;
  std::vector<std::vector<std::vector<int>>> labels_per_kf;
  for (const auto& kf : clip.keyframes) {
    KeyframeInput in{kf.keyframe_id, &kf.grid, {}, kf.proposals};
    std::vector<std::vector<int>> labels;
    if (config.task == Task::Action) {
      std::vector<GroundTruthBox> gts;
      for (const auto& f : kf.foreground) gts.push_back({f.box, f.actions});
      std::vector<Box> dets;
      for (const auto& d : kf.detections) dets.push_back(d.box);
      if (mode == Mode::Train) {
        for (auto& s : assign_labels(dets, gts, config.num_action_classes)) {
          in.foreground.push_back(s.box);
          labels.push_back(std::move(s.labels));
        }
      } else if (!dets.empty()) {
        in.foreground = dets;
      } else {
        for (const auto& f : kf.foreground) in.foreground.push_back(f.box);
      }
    } else {
      for (const auto& f : kf.foreground) in.foreground.push_back(f.box);
    }
    inputs.push_back(std::move(in));
    labels_per_kf.push_back(std::move(labels));
  }
  sample.graph = build_graph(inputs, config.tau_c, config.tau_s);

  for (const auto& group : sample.graph.keyframes) {
    const auto pos = static_cast<std::size_t>(group.keyframe_index);
    const auto& kf = clip.keyframes[pos];
    sample.keyframe_ids.push_back(kf.keyframe_id);
    sample.boxes.push_back(inputs[pos].foreground);
    const std::size_t n = group.fg_ids.size();
    if (config.task == Task::Action) {
      Tensor y = Tensor::zeros(n, static_cast<std::size_t>(config.num_action_classes));
      const auto& lab = labels_per_kf[pos];
      for (std::size_t i = 0; i < lab.size() && i < n; ++i)
        for (std::size_t c = 0; c < lab[i].size(); ++c) y(i, c) = lab[i][c];
      sample.action_labels.push_back(std::move(y));
    } else {
      const auto cobj = static_cast<std::size_t>(config.num_object_classes);
      const auto r = static_cast<std::size_t>(config.num_relation_classes);
      Tensor y = Tensor::zeros(n, cobj);
      SceneGraphTruth truth;
      for (std::size_t i = 0; i < n; ++i) {
        y(i, static_cast<std::size_t>(kf.foreground[i].object_class)) = 1.0;
        truth.object_classes.push_back(kf.foreground[i].object_class);
      }
      Tensor z = Tensor::zeros(n * (n - 1) / 2, r);
      for (const auto& rel : kf.relations) {
        z(pair_index(static_cast<std::size_t>(rel.subject), static_cast<std::size_t>(rel.object)),
          static_cast<std::size_t>(rel.predicate)) = 1.0;
        truth.relations.push_back({rel.subject, rel.object, rel.predicate});
      }
      sample.object_labels.push_back(std::move(y));
      sample.relation_labels.push_back(std::move(z));
      sample.scene_truth.push_back(std::move(truth));
    }
  }
  return sample;
}

struct ClipOutput {
  InferenceResult inference;
  std::vector<ng::Var> logits;           // action logits or object logits, per group
  std::vector<ng::Var> relation_logits;  // per group (scene graphs with >= 2 nodes)
  ng::Var loss;                          // valid when requested
};

/// Forward pass over one clip. The clip loss is the mean per-node action BCE
/// (action task) or the mean per-keyframe scene-graph loss.
inline ClipOutput forward_clip(ng::Tape& tape, const ClipSample& sample, const ng::ParameterSet& params,
                               const ModelConfig& config, bool with_loss, double lambda = 0.5,
                               bool record_traces = false) {
  check_parameters(params, readout_parameter_shapes(config));
  ClipOutput out;
  out.inference = run_inference(tape, sample.graph, params, config, record_traces);
  MessageParams p(tape, params);
  using namespace param_names;
  std::vector<ng::Var> losses;
  std::size_t nodes = 0;
  for (std::size_t k = 0; k < out.inference.foreground.size(); ++k) {
    const auto& h = out.inference.foreground[k];
    if (config.task == Task::Action) {
      out.logits.push_back(action_readout(h, p.get(kActionW), p.get(kActionB)));
      if (with_loss) losses.push_back(action_loss(out.logits.back(), sample.action_labels.at(k)));
      nodes += h.rows();
    } else {
      const auto sg = sg_readout(h, {p.get(kObjectW), p.get(kObjectB), p.get(kRelationW), p.get(kRelationB)});
      out.logits.push_back(sg.object_logits);
      out.relation_logits.push_back(sg.relation_logits);
      if (with_loss)
        losses.push_back(sg_loss(sg.object_logits, sg.relation_logits, sample.object_labels.at(k),
                                 sample.relation_labels.at(k), lambda));
    }
  }
  if (with_loss) {
    if (losses.empty()) throw ContractError("clip '" + sample.clip_id + "' has no foreground nodes");
    auto total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) total = ng::add(total, losses[i]);
    const double denom = config.task == Task::Action ? static_cast<double>(nodes) : static_cast<double>(losses.size());
    out.loss = ng::scale(total, 1.0 / denom);
  }
  return out;
}

struct KeyframePrediction {
  std::string clip_id;
  int keyframe_id = 0;
  std::vector<Box> boxes;
  Tensor action_scores;  // n x C probabilities (action task)
  SceneGraphPrediction scene_graph;
};

inline std::vector<KeyframePrediction> predict_clip(const ClipSample& sample, const ng::ParameterSet& params,
                                                    const ModelConfig& config) {
  ng::Tape tape(false);
  const auto out = forward_clip(tape, sample, params, config, false);
  std::vector<KeyframePrediction> preds;
  for (std::size_t k = 0; k < out.logits.size(); ++k) {
    KeyframePrediction p;
    p.clip_id = sample.clip_id;
    p.keyframe_id = sample.keyframe_ids[k];
    p.boxes = sample.boxes[k];
    if (config.task == Task::Action) {
      p.action_scores = sigmoid(out.logits[k].value());
    } else {
      p.scene_graph.object_logits = out.logits[k].value();
      if (out.relation_logits[k].valid()) p.scene_graph.relation_logits = out.relation_logits[k].value();
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

/// Metrics for a dataset. Action: per-class Frame AP at IoU 0.5 and mAP.
/// Scene graphs: mean per-keyframe Recall@{10,20,50} for SGCls and PredCls.
struct EvalReport {
  Task task = Task::Action;
  std::size_t clips = 0;
  std::size_t keyframes = 0;
  FrameApResult frame_ap;
  std::map<std::string, double> recall;  // e.g. "sgcls_r@20"

  /// Headline number: mAP, or SGCls R@20.
  double headline() const { return task == Task::Action ? frame_ap.mean_ap : recall.at("sgcls_r@20"); }
};

inline std::vector<int> default_recall_ks() { return {10, 20, 50}; }

inline EvalReport evaluate_dataset(const Dataset& ds, const ng::ParameterSet& params, const ModelConfig& config,
                                   EmptyTruthPolicy policy = EmptyTruthPolicy::CountAsOne) {
  check_dataset(ds, config);
  std::vector<std::vector<KeyframePrediction>> per_clip(ds.clips.size());
  std::vector<ClipSample> samples(ds.clips.size());
  parallel_for(ds.clips.size(), [&](std::size_t i) {
    samples[i] = prepare_clip(ds.clips[i], config, Mode::Eval);
    per_clip[i] = predict_clip(samples[i], params, config);
  });

  EvalReport report;
  report.task = config.task;
  report.clips = ds.clips.size();
  if (config.task == Task::Action) {
    std::vector<DetectionRecord> dets;
    std::vector<GroundTruthRecord> gts;
    for (std::size_t i = 0; i < ds.clips.size(); ++i) {
      for (const auto& kf : ds.clips[i].keyframes)
        for (const auto& f : kf.foreground)
          for (int c : f.actions) gts.push_back({ds.clips[i].clip_id, kf.keyframe_id, f.box, c});
      for (const auto& p : per_clip[i]) {
        ++report.keyframes;
        for (std::size_t b = 0; b < p.boxes.size(); ++b)
          for (std::size_t c = 0; c < p.action_scores.cols(); ++c)
            dets.push_back({p.clip_id, p.keyframe_id, p.boxes[b], static_cast<int>(c), p.action_scores(b, c)});
      }
    }
    report.frame_ap = frame_ap(dets, gts, config.num_action_classes, 0.5);
  } else {
    std::vector<SceneGraphPrediction> preds;
    std::vector<SceneGraphTruth> truths;
    for (std::size_t i = 0; i < ds.clips.size(); ++i) {
      for (std::size_t k = 0; k < per_clip[i].size(); ++k) {
        preds.push_back(per_clip[i][k].scene_graph);
        truths.push_back(samples[i].scene_truth[k]);
      }
    }
    report.keyframes = preds.size();
    for (int k : default_recall_ks()) {
      report.recall["sgcls_r@" + std::to_string(k)] = mean_recall_at_k(preds, truths, k, SceneGraphMode::SGCls, policy);
      report.recall["predcls_r@" + std::to_string(k)] =
          mean_recall_at_k(preds, truths, k, SceneGraphMode::PredCls, policy);
    }
  }
  return report;
}

}  // namespace stgraph
