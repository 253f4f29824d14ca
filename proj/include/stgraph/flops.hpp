#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "stgraph/config.hpp"
#include "stgraph/error.hpp"

namespace stgraph {

/// Scene size per keyframe used for cost estimates.
struct SceneShape {
  std::int64_t n_fg = 0;       // foreground nodes per keyframe
  std::int64_t n_context = 0;  // implicit + explicit context nodes per keyframe
  std::int64_t keyframes = 1;  // keyframes processed
};

/// Multiply-add counts of the graph model, split by component and by phase.
/// Only products inside matrix multiplications are counted; softmax, relu,
/// layer norm and bias additions are linear-time extras left out on purpose.
struct FlopReport {
  std::int64_t projection = 0;
  std::int64_t nonlocal = 0;
  std::int64_t gat = 0;
  std::int64_t combine = 0;
  std::int64_t readout = 0;
  std::int64_t spatial_phase = 0;   // message functions + combination, spatial
  std::int64_t temporal_phase = 0;  // the same for temporal edges
  std::int64_t total = 0;

  std::map<std::string, std::int64_t> as_map() const {
    return {{"projection", projection}, {"nonlocal", nonlocal},          {"gat", gat},
            {"combine", combine},       {"readout", readout},            {"spatial_phase", spatial_phase},
            {"temporal_phase", temporal_phase}, {"total", total}};
  }
};

/// Closed-form cost for `scene`. Every keyframe is assumed to see a full
/// temporal window of tau_c - 1 neighbouring keyframes, each contributing n_fg
/// nodes; the stride tau_s only chooses which keyframes those are, so it never
/// enters the count. Costs are therefore linear in the number of keyframes.
inline FlopReport estimate_flops(const ModelConfig& config, const SceneShape& scene) {
  config.validate();
  if (scene.n_fg < 0 || scene.n_context < 0 || scene.keyframes < 0)
    throw ConfigError("scene shape entries must be >= 0");
  const std::int64_t d = config.d, c = config.channels, heads = config.heads;
  const std::int64_t n = scene.n_fg, m = scene.n_context, kf = scene.keyframes;
  const std::int64_t parallel = config.parallel_messages();

  FlopReport r;
  r.projection = kf * (n + m) * c * d;

  // One phase: n queries attending over `nb` neighbours.
  auto phase = [&](std::int64_t nb, std::int64_t& nonlocal, std::int64_t& gat, std::int64_t& combine) {
    if (config.uses(MessageFn::NonLocal))
      nonlocal += heads * (n * d * d + 2 * nb * d * d + 2 * n * nb * d);
    if (config.uses(MessageFn::Gat))
      gat += heads * (n * d + nb * d + nb * d * d + n * nb * d);
    combine += n * d + 2 * parallel * n * d;
  };

  std::int64_t s_nl = 0, s_gat = 0, s_comb = 0;
  phase(n + m, s_nl, s_gat, s_comb);
  std::int64_t t_nl = 0, t_gat = 0, t_comb = 0;
  if (config.tau_c > 1 && n > 0) phase((config.tau_c - 1) * n, t_nl, t_gat, t_comb);

  const std::int64_t scale = kf * config.iterations;
  r.nonlocal = scale * (s_nl + t_nl);
  r.gat = scale * (s_gat + t_gat);
  r.combine = scale * (s_comb + t_comb);
  r.spatial_phase = scale * (s_nl + s_gat + s_comb);
  r.temporal_phase = scale * (t_nl + t_gat + t_comb);

  if (config.task == Task::Action) {
    r.readout = kf * n * d * config.num_action_classes;
  } else {
    r.readout = kf * (n * d * config.num_object_classes + n * (n - 1) / 2 * 2 * d * config.num_relation_classes);
  }
  r.total = r.projection + r.spatial_phase + r.temporal_phase + r.readout;
  return r;
}

}  // namespace stgraph
