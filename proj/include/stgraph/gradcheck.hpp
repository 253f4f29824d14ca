#pragma once

// Finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stgraph/model.hpp"
#include "stgraph/numgrad.hpp"
#include "stgraph/synth.hpp"
#include "stgraph/train.hpp"

namespace stgraph {

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;  // one per parameter, name order
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// Entrywise relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// entries whose true gradient is essentially zero from dividing rounding
/// noise by a vanishing denominator.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares tape gradients of loss_fn(tape, params) against central
/// differences with step `h` for every entry of every parameter.
template <class LossFn>
GradcheckReport gradcheck(const ng::ParameterSet& params, LossFn&& loss_fn, double h = 1e-5, double tolerance = 1e-4) {
  ng::Tape tape;
  const auto loss = loss_fn(tape, params);
  tape.backward(loss);
  const auto analytic = tape.gradients(params);

  auto eval = [&](const ng::ParameterSet& p) {
    ng::Tape t(false);
    return loss_fn(t, p).value()[0];
  };

  GradcheckReport report;
  report.tolerance = tolerance;
  ng::ParameterSet probe = params;
  for (const auto& [name, value] : params) {
    GradcheckEntry entry{name, value.size(), 0.0, 0.0};
    auto& slot = probe.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = slot[i];
      slot[i] = saved + h;
      const double up = eval(probe);
      slot[i] = saved - h;
      const double down = eval(probe);
      slot[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.at(name)[i];
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

/// The clip used by the model gradient check: two keyframes, each with two
/// foreground boxes on a 1 x 2 grid (8 nodes in total). The temporal window is
/// forced to tau_c = 3, tau_s = 1 so the temporal parameters carry gradient.
inline ModelConfig gradcheck_config(ModelConfig config) {
  config.tau_c = 3;
  config.tau_s = 1;
  return config;
}

inline ClipRecord gradcheck_clip(const ModelConfig& config, std::uint64_t seed) {
  detail::SynthRng rng(seed);
  ClipRecord clip;
  clip.clip_id = "gradcheck";
  const auto c = static_cast<std::size_t>(config.channels);
  for (int k = 0; k < 2; ++k) {
    KeyframeRecord kf;
    kf.keyframe_id = k;
    Tensor t(std::vector<std::size_t>{1, 1, 2, c}, 0.0);
    for (auto& v : t.values()) v = rng.normal();
    kf.grid = FeatureGrid(std::move(t), k);
    const Box boxes[2] = {{0.0, 0.0, 0.5, 1.0}, {0.5, 0.0, 1.0, 1.0}};
    for (const auto& b : boxes) {
      ForegroundBox f;
      f.box = b;
      if (config.task == Task::Action) {
        for (int a = 0; a < config.num_action_classes; ++a)
          if (rng.bernoulli(0.5)) f.actions.push_back(a);
      } else {
        f.object_class = rng.below(config.num_object_classes);
      }
      kf.foreground.push_back(std::move(f));
    }
    if (config.task == Task::SceneGraph) kf.relations.push_back({1, 0, rng.below(config.num_relation_classes)});
    clip.keyframes.push_back(std::move(kf));
  }
  return clip;
}

/// Full-model check: random parameters from `seed`, loss of gradcheck_clip.
inline GradcheckReport model_gradcheck(const ModelConfig& base, std::uint64_t seed, double h = 1e-5,
                                       double tolerance = 1e-4) {
  const auto config = gradcheck_config(base);
  const auto clip = gradcheck_clip(config, seed);
  const auto sample = prepare_clip(clip, config, Mode::Train);
  auto params = init_params(config, seed);
  // Non-trivial layer-norm and bias values so their gradients are exercised
  // away from the initial identity point.
  detail::SynthRng rng(seed ^ 0xA5A5A5A5ULL);
  for (auto& [name, t] : params)
    for (auto& v : t.values()) v += 0.1 * rng.normal();
  return gradcheck(
      params,
      [&](ng::Tape& tape, const ng::ParameterSet& p) { return forward_clip(tape, sample, p, config, true).loss; }, h,
      tolerance);
}

}  // namespace stgraph
