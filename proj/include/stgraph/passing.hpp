#pragma once

// Message functions (Non-local, GAT), attention-weighted combination of
// parallel messages, the layer-normalised residual update and the iterated
// spatial-then-temporal schedule.
//
// Node states are rows. Projections act on rows, so a weight W maps h to h W.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "stgraph/config.hpp"
#include "stgraph/error.hpp"
#include "stgraph/graph.hpp"
#include "stgraph/numgrad.hpp"

namespace stgraph {

struct NonLocalWeights {
  ng::Var wq, wk, wv;  // d x d each
};

struct GatWeights {
  ng::Var wa;  // d x d
  ng::Var wb;  // 2d x 1, scores [h_v | h_j]
};

/// Messages (n x d) with the attention matrix that produced them (n x N).
struct AttentionOutput {
  ng::Var messages;
  ng::Var weights;
};

/// M = softmax(Q K^T / sqrt(d)) V with Q = A Wq, K = [A|C] Wk, V = [A|C] Wv.
inline AttentionOutput nonlocal_messages(const ng::Var& fg_states, const ng::Var& all_states,
                                         const NonLocalWeights& w) {
  const std::size_t d = fg_states.cols();
  if (all_states.cols() != d || w.wq.rows() != d || w.wk.rows() != d || w.wv.rows() != d) {
    throw ShapeError("nonlocal_messages: state width " + std::to_string(d) + " vs keys " +
                     all_states.value().shape_string() + ", Wq " + w.wq.value().shape_string());
  }
  const auto q = ng::matmul(fg_states, w.wq);
  const auto k = ng::matmul(all_states, w.wk);
  const auto v = ng::matmul(all_states, w.wv);
  const auto logits = ng::scale(ng::matmul(q, ng::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  const auto attention = ng::softmax_rows(logits);
  return {ng::matmul(attention, v), attention};
}

/// GAT messages for every query row against a shared neighbour set:
/// e_ij = relu(wb^T [h_i | h_j]), alpha = softmax_j(e), m_i = relu(sum_j alpha_ij h_j Wa).
inline AttentionOutput gat_messages(const ng::Var& queries, const ng::Var& neighbors, const GatWeights& w) {
  const std::size_t d = queries.cols();
  if (neighbors.rows() == 0) throw ContractError("gat_messages: empty neighbourhood");
  if (neighbors.cols() != d || w.wa.rows() != d || w.wb.rows() != 2 * d || w.wb.cols() != 1) {
    throw ShapeError("gat_messages: state width " + std::to_string(d) + " vs neighbours " +
                     neighbors.value().shape_string() + ", w_b " + w.wb.value().shape_string());
  }
  const auto self_score = ng::matmul(queries, ng::slice_rows(w.wb, 0, d));
  const auto neighbor_score = ng::matmul(neighbors, ng::slice_rows(w.wb, d, 2 * d));
  const auto alpha = ng::softmax_rows(ng::relu(ng::outer_sum(self_score, neighbor_score)));
  const auto messages = ng::relu(ng::matmul(alpha, ng::matmul(neighbors, w.wa)));
  return {messages, alpha};
}

/// Convex combination of parallel messages, scored like GAT attention:
/// s_k = relu(g^T [h | m_k]), weights = softmax_k(s), out = sum_k weights_k m_k.
/// `weights_out`, when given, receives the n x K weight matrix.
inline ng::Var combine_parallel(const std::vector<ng::Var>& messages, const ng::Var& states, const ng::Var& gate,
                                ng::Var* weights_out = nullptr) {
  if (messages.empty()) throw ContractError("combine_parallel: no messages");
  const std::size_t d = states.cols();
  if (gate.rows() != 2 * d || gate.cols() != 1) {
    throw ShapeError("combine_parallel: gate " + gate.value().shape_string() + " for width " + std::to_string(d));
  }
  for (const auto& m : messages) {
    if (m.value().shape() != states.value().shape()) {
      throw ShapeError("combine_parallel: message " + m.value().shape_string() + " vs states " +
                       states.value().shape_string());
    }
  }
  const auto self_score = ng::matmul(states, ng::slice_rows(gate, 0, d));
  const auto msg_gate = ng::slice_rows(gate, d, 2 * d);
  ng::Var scores;
  for (std::size_t k = 0; k < messages.size(); ++k) {
    const auto col = ng::add(self_score, ng::matmul(messages[k], msg_gate));
    scores = k == 0 ? col : ng::concat_cols(scores, col);
  }
  const auto weights = ng::softmax_rows(ng::relu(scores));
  if (weights_out) *weights_out = weights;
  ng::Var out;
  for (std::size_t k = 0; k < messages.size(); ++k) {
    const auto term = ng::mul_col(messages[k], ng::slice_cols(weights, k, k + 1));
    out = k == 0 ? term : ng::add(out, term);
  }
  return out;
}

/// LN(h + m): residual connection followed by layer normalisation.
inline ng::Var update_node(const ng::Var& h, const ng::Var& m, const ng::Var& ln_scale, const ng::Var& ln_shift,
                           double eps) {
  return ng::layer_norm(ng::add(h, m), ln_scale, ln_shift, eps);
}

// ---------------------------------------------------------------------------
// Parameter layout.

using ShapeMap = std::map<std::string, std::vector<std::size_t>>;

/// Shapes of every message-passing parameter (projections included) for `config`.
/// Temporal parameters always exist so a spatial-only checkpoint can be
/// fine-tuned with the temporal graph switched on.
inline ShapeMap message_parameter_shapes(const ModelConfig& config) {
  using namespace param_names;
  const auto d = static_cast<std::size_t>(config.d);
  const auto c = static_cast<std::size_t>(config.channels);
  ShapeMap shapes{{kBoxProjW, {c, d}}, {kBoxProjB, {1, d}}, {kGridProjW, {c, d}}, {kGridProjB, {1, d}}};
  for (int i = 0; i < config.iterations; ++i) {
    for (Phase phase : {Phase::Spatial, Phase::Temporal}) {
      for (MessageFn fn : config.message_fns) {
        for (int h = 0; h < config.heads; ++h) {
          const auto base = head(i, phase, fn, h);
          if (fn == MessageFn::NonLocal) {
            shapes[base + ".W_q"] = {d, d};
            shapes[base + ".W_k"] = {d, d};
            shapes[base + ".W_v"] = {d, d};
          } else {
            shapes[base + ".W_a"] = {d, d};
            shapes[base + ".w_b"] = {2 * d, 1};
          }
        }
      }
      shapes[ln_scale(i, phase)] = {1, d};
      shapes[ln_shift(i, phase)] = {1, d};
      shapes[gate(i, phase)] = {2 * d, 1};
    }
  }
  return shapes;
}

/// Throws ConfigError naming the first missing or mis-shaped parameter.
inline void check_parameters(const ng::ParameterSet& params, const ShapeMap& shapes) {
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("parameter '" + name + "' missing for this configuration");
    if (it->second.shape() != shape) {
      throw ConfigError("parameter '" + name + "' has shape " + it->second.shape_string() + ", configuration needs " +
                        Tensor::shape_string(shape));
    }
  }
}

/// Fetches message-passing parameters onto a tape by role.
class MessageParams {
 public:
  MessageParams(ng::Tape& tape, const ng::ParameterSet& params) : tape_(tape), params_(params) {}

  ng::Var get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("parameter '" + name + "' missing");
    return tape_.parameter(name, it->second);
  }

  NonLocalWeights nonlocal(int iteration, Phase phase, int h) const {
    const auto base = param_names::head(iteration, phase, MessageFn::NonLocal, h);
    return {get(base + ".W_q"), get(base + ".W_k"), get(base + ".W_v")};
  }
  GatWeights gat(int iteration, Phase phase, int h) const {
    const auto base = param_names::head(iteration, phase, MessageFn::Gat, h);
    return {get(base + ".W_a"), get(base + ".w_b")};
  }
  ng::Var ln_scale(int iteration, Phase phase) const { return get(param_names::ln_scale(iteration, phase)); }
  ng::Var ln_shift(int iteration, Phase phase) const { return get(param_names::ln_shift(iteration, phase)); }
  ng::Var gate(int iteration, Phase phase) const { return get(param_names::gate(iteration, phase)); }

 private:
  ng::Tape& tape_;
  const ng::ParameterSet& params_;
};

// ---------------------------------------------------------------------------
// Inference.

/// Attention weights of one (iteration, phase, keyframe, source, head).
/// `source` is "gat", "nonlocal" or "gate" (the head-combination weights,
/// whose columns index parallel messages rather than nodes).
struct AttentionTrace {
  int iteration = 0;
  Phase phase = Phase::Spatial;
  std::size_t keyframe = 0;  // index into SpatioTemporalGraph::keyframes
  std::string source;
  int head = 0;
  std::vector<int> query_ids;
  std::vector<int> neighbor_ids;  // empty for gate traces
  Tensor weights;                 // |query_ids| x |neighbor_ids| (or x K for gates)
};

struct InferenceResult {
  std::vector<ng::Var> foreground;  // final states per keyframe group, n_k x d
  std::vector<ng::Var> context;     // context states per keyframe group (never updated)
  std::vector<AttentionTrace> traces;
};

namespace detail {

inline ng::Var phase_update(const MessageParams& p, const ModelConfig& config, int iteration, Phase phase,
                            std::size_t keyframe, const ng::Var& states, const ng::Var& neighbors,
                            const std::vector<int>& query_ids,
                            const std::vector<int>& neighbor_ids, std::vector<AttentionTrace>* traces) {
  std::vector<ng::Var> messages;
  auto trace = [&](const char* source, int h, const ng::Var& weights, const std::vector<int>& cols) {
    if (traces) traces->push_back({iteration, phase, keyframe, source, h, query_ids, cols, weights.value()});
  };
  for (MessageFn fn : config.message_fns) {
    for (int h = 0; h < config.heads; ++h) {
      if (fn == MessageFn::Gat) {
        auto out = gat_messages(states, neighbors, p.gat(iteration, phase, h));
        trace("gat", h, out.weights, neighbor_ids);
        messages.push_back(out.messages);
      } else {
        auto out = nonlocal_messages(states, neighbors, p.nonlocal(iteration, phase, h));
        trace("nonlocal", h, out.weights, neighbor_ids);
        messages.push_back(out.messages);
      }
    }
  }
  ng::Var gate_weights;
  const auto combined = combine_parallel(messages, states, p.gate(iteration, phase), &gate_weights);
  trace("gate", 0, gate_weights, {});
  return update_node(states, combined, p.ln_scale(iteration, phase), p.ln_shift(iteration, phase), config.ln_eps);
}

}  // namespace detail

/// Runs I iterations of (spatial phase, temporal phase) over the graph. Each
/// phase reads only pre-phase states. Foreground nodes without temporal
/// neighbours skip the temporal update. Context states are never written.
inline InferenceResult run_inference(ng::Tape& tape, const SpatioTemporalGraph& graph, const ng::ParameterSet& params,
                                     const ModelConfig& config, bool record_traces) {
  config.validate();
  check_parameters(params, message_parameter_shapes(config));
  if (graph.tau_c != config.tau_c || graph.tau_s != config.tau_s) {
    throw ConfigError("graph built with tau_c=" + std::to_string(graph.tau_c) + ", tau_s=" +
                      std::to_string(graph.tau_s) + " but config has tau_c=" + std::to_string(config.tau_c) +
                      ", tau_s=" + std::to_string(config.tau_s));
  }
  MessageParams p(tape, params);
  InferenceResult result;
  auto* traces = record_traces ? &result.traces : nullptr;

  std::vector<ng::Var> fg;
  for (const auto& group : graph.keyframes) {
    auto s = project_nodes(tape, group, params);
    fg.push_back(s.foreground);
    result.context.push_back(s.context);
  }

  for (int it = 0; it < config.iterations; ++it) {
    std::vector<ng::Var> next(fg.size());
    for (std::size_t k = 0; k < graph.keyframes.size(); ++k) {
      const auto& group = graph.keyframes[k];
      const auto all = ng::concat_rows(std::vector<ng::Var>{fg[k], result.context[k]});
      next[k] = detail::phase_update(p, config, it, Phase::Spatial, k, fg[k], all, group.fg_ids,
                                     group.all_ids(), traces);
    }
    fg = std::move(next);

    next = fg;
    for (std::size_t k = 0; k < graph.keyframes.size(); ++k) {
      const auto& group = graph.keyframes[k];
      if (group.temporal_sources.empty()) continue;
      std::vector<ng::Var> parts;
      std::vector<int> ids;
      for (auto src : group.temporal_sources) {
        parts.push_back(fg[src]);
        const auto& f = graph.keyframes[src].fg_ids;
        ids.insert(ids.end(), f.begin(), f.end());
      }
      next[k] = detail::phase_update(p, config, it, Phase::Temporal, k, fg[k], ng::concat_rows(parts),
                                     group.fg_ids, ids, traces);
    }
    fg = std::move(next);
  }
  result.foreground = std::move(fg);
  return result;
}

}  // namespace stgraph
