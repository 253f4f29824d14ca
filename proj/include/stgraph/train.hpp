#pragma once

// SGD with momentum and weight decay, the warmup/step-decay learning-rate
// schedule, seeded initialisation and the minibatch training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stgraph/config.hpp"
#include "stgraph/dataset.hpp"
#include "stgraph/heads.hpp"
#include "stgraph/model.hpp"
#include "stgraph/numgrad.hpp"
#include "stgraph/parallel.hpp"

namespace stgraph {

struct Schedule {
  double base_lr = 0.1;
  double warmup_start_lr = 1.25e-4;
  double warmup_epochs = 5.0;
  std::vector<double> decay_epochs{10.0, 15.0};
  double decay_factor = 10.0;
  double total_epochs = 20.0;

  void validate() const {
    if (!(base_lr >= 0.0) || !(warmup_start_lr >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be > 0");
    if (!(total_epochs >= 0.0)) throw ConfigError("total_epochs must be >= 0");
    if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end()))
      throw ConfigError("decay epochs must be increasing");
    if (total_epochs > 0.0 && !decay_epochs.empty() &&
        !(warmup_epochs < decay_epochs.front() && decay_epochs.back() < total_epochs)) {
      throw ConfigError("schedule needs warmup_epochs < decay epochs < total_epochs");
    }
  }

  /// Same shape of schedule stretched or shrunk to `total` epochs.
  Schedule scaled_to(double total) const {
    Schedule s = *this;
    const double f = total_epochs > 0.0 ? total / total_epochs : 0.0;
    s.warmup_epochs = warmup_epochs * f;
    for (auto& e : s.decay_epochs) e *= f;
    s.total_epochs = total;
    return s;
  }
};

/// Learning rate at a (fractional) epoch: linear warmup, then the base rate
/// divided by decay_factor once per decay epoch already reached.
inline double lr_at(double epoch, const Schedule& s) {
  if (epoch < s.warmup_epochs) {
    return s.warmup_start_lr + (s.base_lr - s.warmup_start_lr) * (epoch / s.warmup_epochs);
  }
  double lr = s.base_lr;
  for (double d : s.decay_epochs)
    if (epoch >= d) lr /= s.decay_factor;
  return lr;
}

struct OptimState {
  double momentum = 0.9;
  double weight_decay = 1e-7;
  ng::ParameterSet velocity;
  std::uint64_t step = 0;
};

/// v <- momentum * v + (g + wd * p);  p <- p - lr * v.
inline void sgd_step(ng::ParameterSet& params, const ng::ParameterSet& grads, double lr, OptimState& state) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite())
      throw NumericError("non-finite gradient for parameter '" + name + "' at step " + std::to_string(state.step));
    auto it = params.find(name);
    if (it == params.end()) throw LookupError("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
  }
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw LookupError("no gradient for parameter '" + name + "'");
    auto [v_it, inserted] = state.velocity.try_emplace(name, Tensor(p.shape(), 0.0));
    auto& v = v_it->second;
    if (v.shape() != p.shape()) throw ShapeError("velocity shape mismatch for '" + name + "'");
    auto pv = p.values();
    auto vv = v.values();
    auto gv = g->second.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      vv[i] = state.momentum * vv[i] + (gv[i] + state.weight_decay * pv[i]);
      pv[i] -= lr * vv[i];
    }
  }
  ++state.step;
}

/// Uniform double in [0, 1) from the top 53 bits of one draw. Written out so
/// parameter values do not depend on the standard library's distributions.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool is_bias_name(const std::string& name) { return name.size() >= 2 && name.ends_with(".b"); }

/// Glorot-uniform weights (a = sqrt(6 / (fan_in + fan_out)) with fan_in = rows,
/// fan_out = cols), zero biases, layer-norm scale 1 and shift 0. Parameters are
/// filled in name order from one generator seeded with `seed`.
inline ng::ParameterSet init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ng::ParameterSet params;
  for (const auto& [name, shape] : model_parameter_shapes(config)) {
    Tensor t(shape, 0.0);
    if (name.ends_with(".ln.scale")) {
      for (auto& v : t.values()) v = 1.0;
    } else if (!is_bias_name(name) && !name.ends_with(".ln.shift")) {
      const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (auto& v : t.values()) v = (2.0 * unit_uniform(rng) - 1.0) * a;
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;      // rate at the first step of the epoch
  double loss = 0.0;    // mean clip loss over the epoch
  std::optional<double> train_metric;
};

struct TrainOptions {
  int epochs = 20;
  int batch_size = 0;  // 0: 8 clips divided by tau_c (at least 1)
  Schedule schedule;   // rescaled to `epochs`
  double momentum = 0.9;
  double weight_decay = 1e-7;
  double lambda = 0.5;       // scene-graph object-loss weight
  bool metric_each_epoch = false;
  std::function<void(const EpochLog&)> on_epoch;
};

inline int effective_batch_size(const TrainOptions& opts, const ModelConfig& config) {
  if (opts.batch_size > 0) return opts.batch_size;
  return std::max(1, 8 / config.tau_c);
}

struct ClipGradient {
  double loss = 0.0;
  ng::ParameterSet grads;
};

inline ClipGradient clip_gradient(const ClipSample& sample, const ng::ParameterSet& params, const ModelConfig& config,
                                  double lambda) {
  ng::Tape tape;
  const auto out = forward_clip(tape, sample, params, config, true, lambda);
  tape.backward(out.loss);
  return {out.loss.value()[0], tape.gradients(params)};
}

/// Summed loss and gradient of a batch. Per-clip work may run in parallel;
/// the reduction always adds clips in batch order.
inline ClipGradient batch_gradient(std::span<const ClipSample* const> batch, const ng::ParameterSet& params,
                                   const ModelConfig& config, double lambda) {
  std::vector<ClipGradient> parts(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { parts[i] = clip_gradient(*batch[i], params, config, lambda); });
  ClipGradient total;
  for (const auto& [name, p] : params) total.grads.emplace(name, Tensor(p.shape(), 0.0));
  for (const auto& part : parts) {
    total.loss += part.loss;
    for (auto& [name, g] : total.grads) {
      auto dst = g.values();
      auto src = part.grads.at(name).values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return total;
}

struct TrainResult {
  ng::ParameterSet params;
  std::vector<EpochLog> log;
};

/// Trains from `initial` (or a fresh seeded init). Batches are drawn from a
/// per-epoch shuffle seeded by (seed, epoch); each step uses the learning rate
/// at the current fractional epoch.
inline TrainResult train_loop(const Dataset& ds, const ModelConfig& config, const TrainOptions& opts, std::uint64_t seed,
                              std::optional<ng::ParameterSet> initial = std::nullopt) {
  config.validate();
  check_dataset(ds, config);
  if (ds.clips.empty()) throw ValidationError("training set is empty");
  if (opts.epochs < 0) throw ConfigError("epochs must be >= 0");
  const Schedule schedule = opts.schedule.scaled_to(static_cast<double>(opts.epochs));
  schedule.validate();

  TrainResult result;
  result.params = initial ? std::move(*initial) : init_params(config, seed);
  check_parameters(result.params, model_parameter_shapes(config));

  std::vector<ClipSample> samples(ds.clips.size());
  parallel_for(ds.clips.size(), [&](std::size_t i) { samples[i] = prepare_clip(ds.clips[i], config, Mode::Train); });

  OptimState state;
  state.momentum = opts.momentum;
  state.weight_decay = opts.weight_decay;
  const auto batch = static_cast<std::size_t>(effective_batch_size(opts, config));
  const std::size_t steps = (samples.size() + batch - 1) / batch;

  std::vector<std::size_t> order(samples.size());
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    EpochLog entry;
    entry.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const ClipSample*> members;
      for (std::size_t i = s * batch; i < std::min(order.size(), (s + 1) * batch); ++i)
        members.push_back(&samples[order[i]]);
      const double lr = lr_at(epoch + static_cast<double>(s) / static_cast<double>(steps), schedule);
      if (s == 0) entry.lr = lr;
      const auto g = batch_gradient(members, result.params, config, opts.lambda);
      loss_sum += g.loss;
      sgd_step(result.params, g.grads, lr, state);
    }
    entry.loss = loss_sum / static_cast<double>(samples.size());
    if (opts.metric_each_epoch) entry.train_metric = evaluate_dataset(ds, result.params, config).headline();
    if (opts.on_epoch) opts.on_epoch(entry);
    result.log.push_back(entry);
  }
  return result;
}

}  // namespace stgraph
