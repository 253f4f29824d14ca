#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "stgraph/dataset.hpp"
#include "stgraph/numgrad.hpp"

namespace testing_support {

using stgraph::Tensor;
namespace ng = stgraph::ng;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// Largest entrywise relative error between the tape gradient of
/// f(inputs...) with respect to each input and central differences.
inline double max_fd_error(const std::vector<Tensor>& inputs,
                           const std::function<ng::Var(ng::Tape&, const std::vector<ng::Var>&)>& f,
                           double h = 1e-5) {
  ng::Tape tape;
  std::vector<ng::Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.parameter("x" + std::to_string(i), inputs[i]));
  tape.backward(f(tape, vars));
  auto eval = [&](const std::vector<Tensor>& xs) {
    ng::Tape t(false);
    std::vector<ng::Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    return f(t, vs).value()[0];
  };
  double worst = 0.0;
  auto probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = tape.gradient("x" + std::to_string(i));
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double saved = probe[i][k];
      probe[i][k] = saved + h;
      const double up = eval(probe);
      probe[i][k] = saved - h;
      const double down = eval(probe);
      probe[i][k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
    }
  }
  return worst;
}

/// r^T out c with fixed random r, c: turns any output into a scalar whose
/// gradient r c^T reaches every output entry.
inline ng::Var probe_sum(ng::Tape& tape, const ng::Var& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const auto r = tape.constant(random_tensor(out.rows(), 1, rng));
  const auto c = tape.constant(random_tensor(out.cols(), 1, rng));
  return ng::matmul(ng::transpose(r), ng::matmul(out, c));
}

/// Random grid with values in [-1, 1].
inline stgraph::FeatureGrid random_grid(std::size_t t, std::size_t h, std::size_t w, std::size_t c,
                                        std::mt19937_64& rng, int keyframe_id = 0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(t * h * w * c);
  for (auto& x : v) x = u(rng);
  return stgraph::FeatureGrid(Tensor({t, h, w, c}, std::move(v)), keyframe_id);
}

/// A box whose edges sit just inside a random block of whole cells, so it
/// always contains at least one cell centre.
inline stgraph::Box random_cell_box(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  auto span = [&](std::size_t n) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t a = pick(rng), b = pick(rng);
    if (a > b) std::swap(a, b);
    const double lo = static_cast<double>(a) / n, hi = static_cast<double>(b + 1) / n;
    return std::pair{lo + 0.1 / n, hi - 0.1 / n};
  };
  const auto [x1, x2] = span(w);
  const auto [y1, y2] = span(h);
  return {x1, y1, x2, y2};
}

struct ClipShape {
  std::vector<int> fg_per_keyframe;  // 0 leaves a keyframe without foreground
  std::size_t t = 2, h = 1, w = 2, c = 4;
  std::size_t proposals = 1;
  int action_classes = 3;
};

/// A random action clip with the given layout.
inline stgraph::ClipRecord random_clip(const ClipShape& s, std::mt19937_64& rng, const std::string& id = "c") {
  stgraph::ClipRecord clip;
  clip.clip_id = id;
  for (std::size_t k = 0; k < s.fg_per_keyframe.size(); ++k) {
    stgraph::KeyframeRecord kf;
    kf.keyframe_id = static_cast<int>(10 * k);
    kf.grid = random_grid(s.t, s.h, s.w, s.c, rng, kf.keyframe_id);
    for (int i = 0; i < s.fg_per_keyframe[k]; ++i) {
      stgraph::ForegroundBox f;
      f.box = random_cell_box(s.h, s.w, rng);
      f.actions = {static_cast<int>(rng() % static_cast<std::uint64_t>(s.action_classes))};
      kf.foreground.push_back(f);
    }
    for (std::size_t p = 0; p < s.proposals; ++p) kf.proposals.push_back(random_cell_box(s.h, s.w, rng));
    clip.keyframes.push_back(std::move(kf));
  }
  return clip;
}

/// Adds sigma * N(0, 1) to every parameter entry.
inline void perturb(ng::ParameterSet& params, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& [name, t] : params)
    for (auto& v : t.values()) v += n(rng);
}

}  // namespace testing_support
