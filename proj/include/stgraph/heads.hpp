#pragma once

// Readouts over final foreground states and the two task losses.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "stgraph/config.hpp"
#include "stgraph/error.hpp"
#include "stgraph/numgrad.hpp"
#include "stgraph/passing.hpp"

namespace stgraph {

inline ShapeMap readout_parameter_shapes(const ModelConfig& config) {
  using namespace param_names;
  const auto d = static_cast<std::size_t>(config.d);
  if (config.task == Task::Action) {
    const auto c = static_cast<std::size_t>(config.num_action_classes);
    return {{kActionW, {d, c}}, {kActionB, {1, c}}};
  }
  const auto c = static_cast<std::size_t>(config.num_object_classes);
  const auto r = static_cast<std::size_t>(config.num_relation_classes);
  return {{kObjectW, {d, c}}, {kObjectB, {1, c}}, {kRelationW, {2 * d, r}}, {kRelationB, {1, r}}};
}

/// Every parameter of the model for `config`.
inline ShapeMap model_parameter_shapes(const ModelConfig& config) {
  auto shapes = message_parameter_shapes(config);
  shapes.merge(readout_parameter_shapes(config));
  return shapes;
}

// ---------------------------------------------------------------------------
// Action detection.

/// Per-node linear classifier: logits = H W + b (n x C). Probabilities are
/// the elementwise sigmoid of the logits.
inline ng::Var action_readout(const ng::Var& fg_states, const ng::Var& w, const ng::Var& b) {
  return ng::add_row(ng::matmul(fg_states, w), b);
}

/// Binary cross-entropy averaged over the C classes of each row and summed
/// over rows (one row per foreground node).
inline ng::Var action_loss(const ng::Var& logits, const Tensor& labels) {
  const auto classes = static_cast<double>(logits.cols());
  return ng::scale(ng::sigmoid_cross_entropy_sum(logits, labels), 1.0 / classes);
}

/// Value-only form of action_loss for a single logit row.
inline double action_loss(const Tensor& logits, const Tensor& labels) {
  ng::Tape tape(false);
  return action_loss(tape.constant(logits), labels).value()[0];
}

inline Tensor sigmoid(const Tensor& logits) {
  Tensor out = logits;
  for (auto& v : out.values()) v = ng::kernels::sigmoid(v);
  return out;
}

// ---------------------------------------------------------------------------
// Scene graphs.

/// Unordered foreground pairs (i, j) with i > j, in the order
/// (1,0), (2,0), (2,1), (3,0), ...
inline std::vector<std::pair<std::size_t, std::size_t>> node_pairs(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) pairs.emplace_back(i, j);
  return pairs;
}

inline std::size_t pair_index(std::size_t i, std::size_t j) {
  if (i < j) std::swap(i, j);
  if (i == j) throw ContractError("pair_index: a node is not paired with itself");
  return i * (i - 1) / 2 + j;
}

struct SceneGraphHeads {
  ng::Var object_w, object_b;      // d x C_obj, 1 x C_obj
  ng::Var relation_w, relation_b;  // 2d x R, 1 x R
};

struct SceneGraphLogits {
  ng::Var object_logits;    // N x C_obj
  ng::Var relation_logits;  // N(N-1)/2 x R, rows follow node_pairs(N); invalid when N == 1
};

/// Object classifier per node plus a relation classifier over [h_i | h_j], i > j.
inline SceneGraphLogits sg_readout(const ng::Var& fg_states, const SceneGraphHeads& heads) {
  const std::size_t n = fg_states.rows();
  if (n == 0) throw ContractError("sg_readout: no foreground nodes");
  SceneGraphLogits out;
  out.object_logits = ng::add_row(ng::matmul(fg_states, heads.object_w), heads.object_b);
  const auto pairs = node_pairs(n);
  if (pairs.empty()) return out;
  std::vector<std::size_t> first, second;
  for (auto [i, j] : pairs) {
    first.push_back(i);
    second.push_back(j);
  }
  const auto joined = ng::concat_cols(ng::gather_rows(fg_states, first), ng::gather_rows(fg_states, second));
  out.relation_logits = ng::add_row(ng::matmul(joined, heads.relation_w), heads.relation_b);
  return out;
}

/// Evaluated scene-graph readout.
struct SceneGraphPrediction {
  Tensor object_logits;    // N x C_obj
  Tensor relation_logits;  // N(N-1)/2 x R, rows follow node_pairs(N)

  std::size_t nodes() const { return object_logits.rows(); }
  std::size_t relation_classes() const { return relation_logits.empty() ? 0 : relation_logits.cols(); }
  double relation_logit(std::size_t i, std::size_t j, std::size_t r) const {
    return relation_logits(pair_index(i, j), r);
  }
};

inline void require_one_hot(const Tensor& y) {
  for (std::size_t i = 0; i < y.rows(); ++i) {
    int ones = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      const double v = y(i, j);
      if (v != 0.0 && v != 1.0) throw ValidationError("object labels must be 0/1, row " + std::to_string(i));
      ones += v == 1.0;
    }
    if (ones != 1) throw ValidationError("object label row " + std::to_string(i) + " is not one-hot");
  }
}

/// lambda * L_object + L_rel. L_object is softmax cross-entropy averaged over
/// N nodes; L_rel is sigmoid cross-entropy averaged over N(N-1)/2 pairs and R
/// classes (zero when N == 1).
inline ng::Var sg_loss(const ng::Var& object_logits, const ng::Var& relation_logits, const Tensor& y,
                       const Tensor& z, double lambda) {
  require_one_hot(y);
  const std::size_t n = object_logits.rows();
  auto object = ng::scale(ng::softmax_cross_entropy_sum(object_logits, y), lambda / static_cast<double>(n));
  if (n < 2) return object;
  for (double v : z.values())
    if (v != 0.0 && v != 1.0) throw ValidationError("relation labels must be 0/1");
  const std::size_t r = relation_logits.cols();
  const double norm = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1) * static_cast<double>(r));
  auto rel = ng::scale(ng::sigmoid_cross_entropy_sum(relation_logits, z), norm);
  return ng::add(object, rel);
}

/// Value-only form of sg_loss.
inline double sg_loss(const Tensor& object_logits, const Tensor& relation_logits, const Tensor& y, const Tensor& z,
                      double lambda) {
  ng::Tape tape(false);
  const auto obj = tape.constant(object_logits);
  const auto rel = relation_logits.empty() ? obj : tape.constant(relation_logits);
  return sg_loss(obj, rel, y, z, lambda).value()[0];
}

}  // namespace stgraph
