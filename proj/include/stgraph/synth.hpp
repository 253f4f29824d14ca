#pragma once

// Seeded synthetic datasets small enough to train in seconds.
//
// Every keyframe holds a grid of background noise. Foreground boxes cover a
// 2x2 block of cells whose features carry a presence channel and a code that
// depends on the generator kind:
//   action-spatial   the box code is its own action labels
//   action-temporal  the box code is a random bit pattern s; the label at
//                    keyframe k is s(k - stride) OR s(k + stride), so a model
//                    has to look at neighbouring keyframes to predict it
//   scenegraph       the box code is a fixed random signature of its object
//                    class; relations follow from the classes of the pair

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stgraph/config.hpp"
#include "stgraph/dataset.hpp"
#include "stgraph/graph.hpp"
#include "stgraph/train.hpp"

namespace stgraph {

enum class SynthKind { ActionSpatial, ActionTemporal, SceneGraph };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "action-spatial") return SynthKind::ActionSpatial;
  if (s == "action-temporal") return SynthKind::ActionTemporal;
  if (s == "scenegraph") return SynthKind::SceneGraph;
  throw ConfigError("unknown synthetic dataset kind '" + s + "' (expected action-spatial, action-temporal, scenegraph)");
}

struct SynthOptions {
  SynthKind kind = SynthKind::ActionSpatial;
  int clips = 24;
  int keyframes = 3;  // per clip
  int grid = 4;       // grid is grid x grid cells
  int channels = 8;
  int num_action_classes = 3;
  int num_object_classes = 35;
  int num_relation_classes = 25;
  int stride = 2;              // action-temporal: keyframe offset of the label source
  double signal_prob = 0.2;    // action-temporal: chance each code bit is on
  double noise = 0.1;          // std of the background and foreground noise
  std::string prefix = "clip"; // clip ids are prefix + index
  std::uint64_t seed = 0;
};

namespace detail {

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return unit_uniform(rng_); }
  int below(int n) { return static_cast<int>(rng_() % static_cast<std::uint64_t>(n)); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Box-Muller, one value per call.
  double normal() {
    const double u1 = 1.0 - uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 rng_;
};

/// Values are rounded through float so a dataset saved to disk reloads bit-identically.
inline double as_stored(double v) { return static_cast<double>(static_cast<float>(v)); }

struct Placement {
  Box box;
  std::vector<double> code;  // written into channels 1..code.size()
};

inline FeatureGrid make_grid(SynthRng& rng, const SynthOptions& o, int keyframe_id,
                             const std::vector<std::pair<int, int>>& corners, const std::vector<Placement>& fg) {
  const auto g = static_cast<std::size_t>(o.grid);
  const auto c = static_cast<std::size_t>(o.channels);
  Tensor t(std::vector<std::size_t>{1, g, g, c}, 0.0);
  for (auto& v : t.values()) v = o.noise * rng.normal();
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const auto [row, col] = corners[i];
    for (int y = row; y < row + 2; ++y) {
      for (int x = col; x < col + 2; ++x) {
        const std::size_t base = (static_cast<std::size_t>(y) * g + static_cast<std::size_t>(x)) * c;
        t[base] += 1.0;  // presence
        for (std::size_t k = 0; k < fg[i].code.size() && k + 1 < c; ++k) t[base + 1 + k] += fg[i].code[k];
      }
    }
  }
  for (auto& v : t.values()) v = as_stored(v);
  return FeatureGrid(std::move(t), keyframe_id);
}

inline Box block_box(int row, int col, int grid) {
  const double s = 1.0 / grid;
  return Box{as_stored(col * s), as_stored(row * s), as_stored((col + 2) * s), as_stored((row + 2) * s)};
}

/// Distinct 2x2 block corners; blocks on a coarse 2-cell lattice never overlap.
inline std::vector<std::pair<int, int>> pick_corners(SynthRng& rng, int grid, int count) {
  std::vector<std::pair<int, int>> slots;
  for (int r = 0; r + 2 <= grid; r += 2)
    for (int c = 0; c + 2 <= grid; c += 2) slots.emplace_back(r, c);
  if (count > static_cast<int>(slots.size())) throw ConfigError("grid too small for the requested boxes");
  for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[static_cast<std::size_t>(rng.below(static_cast<int>(i)))]);
  slots.resize(static_cast<std::size_t>(count));
  return slots;
}

inline Box random_proposal(SynthRng& rng) {
  const double x1 = as_stored(0.5 * rng.uniform()), y1 = as_stored(0.5 * rng.uniform());
  return Box{x1, y1, as_stored(x1 + 0.25 + 0.25 * rng.uniform()), as_stored(y1 + 0.25 + 0.25 * rng.uniform())};
}

}  // namespace detail

inline Dataset synth_dataset(const SynthOptions& o) {
  if (o.clips < 1 || o.keyframes < 1) throw ConfigError("synth needs at least one clip and one keyframe");
  if (o.grid < 2 || o.channels < 2) throw ConfigError("synth needs grid >= 2 and channels >= 2");
  detail::SynthRng rng(o.seed);
  Dataset ds;
  const bool action = o.kind != SynthKind::SceneGraph;
  ds.header.task = action ? Task::Action : Task::SceneGraph;
  if (action) {
    ds.header.num_action_classes = o.num_action_classes;
    if (o.num_action_classes + 1 > o.channels) throw ConfigError("synth needs channels > action classes");
  } else {
    ds.header.num_object_classes = o.num_object_classes;
    ds.header.num_relation_classes = o.num_relation_classes;
  }

  // Scene graphs: one fixed Gaussian signature per object class, and a predicate
  // table over class pairs (-1 marks "no relation").
  std::vector<std::vector<double>> signatures;
  std::vector<int> predicate_of;
  if (!action) {
    for (int k = 0; k < o.num_object_classes; ++k) {
      std::vector<double> s(static_cast<std::size_t>(o.channels - 1));
      for (auto& v : s) v = rng.normal();
      signatures.push_back(std::move(s));
    }
    for (int k = 0; k < o.num_object_classes * o.num_object_classes; ++k)
      predicate_of.push_back(rng.bernoulli(0.6) ? rng.below(o.num_relation_classes) : -1);
  }

  const auto classes = static_cast<std::size_t>(o.num_action_classes);
  for (int ci = 0; ci < o.clips; ++ci) {
    ClipRecord clip;
    clip.clip_id = o.prefix + std::to_string(ci);
    // action-temporal codes for every keyframe, drawn up front
    std::vector<std::vector<int>> bits(static_cast<std::size_t>(o.keyframes), std::vector<int>(classes, 0));
    if (o.kind == SynthKind::ActionTemporal)
      for (auto& b : bits)
        for (auto& v : b) v = rng.bernoulli(o.signal_prob) ? 1 : 0;

    for (int k = 0; k < o.keyframes; ++k) {
      KeyframeRecord kf;
      kf.keyframe_id = k;
      kf.grid_path = "grids/" + clip.clip_id + "_" + std::to_string(k) + ".stgf";
      int count = 1;
      if (o.kind == SynthKind::ActionSpatial) count = 1 + rng.below(2);
      if (o.kind == SynthKind::SceneGraph) count = 2 + rng.below(3);
      const auto corners = detail::pick_corners(rng, o.grid, count);
      std::vector<detail::Placement> fg;
      for (int i = 0; i < count; ++i) {
        ForegroundBox box;
        box.box = detail::block_box(corners[static_cast<std::size_t>(i)].first,
                                    corners[static_cast<std::size_t>(i)].second, o.grid);
        std::vector<double> code;
        if (o.kind == SynthKind::ActionSpatial) {
          for (std::size_t c = 0; c < classes; ++c) {
            const bool on = rng.bernoulli(0.5);
            if (on) box.actions.push_back(static_cast<int>(c));
            code.push_back(on ? 1.0 : -1.0);
          }
        } else if (o.kind == SynthKind::ActionTemporal) {
          const auto ku = static_cast<std::size_t>(k);
          for (std::size_t c = 0; c < classes; ++c) {
            code.push_back(bits[ku][c] ? 1.0 : -1.0);
            const int before = k - o.stride, after = k + o.stride;
            const bool on = (before >= 0 && bits[static_cast<std::size_t>(before)][c]) ||
                            (after < o.keyframes && bits[static_cast<std::size_t>(after)][c]);
            if (on) box.actions.push_back(static_cast<int>(c));
          }
        } else {
          box.object_class = rng.below(o.num_object_classes);
          code = signatures[static_cast<std::size_t>(box.object_class)];
        }
        fg.push_back({box.box, std::move(code)});
        kf.foreground.push_back(std::move(box));
      }
      if (!action) {
        for (int i = 1; i < count; ++i) {
          for (int j = 0; j < i; ++j) {
            const int a = kf.foreground[static_cast<std::size_t>(i)].object_class;
            const int b = kf.foreground[static_cast<std::size_t>(j)].object_class;
            const int p = predicate_of[static_cast<std::size_t>(a * o.num_object_classes + b)];
            if (p >= 0) kf.relations.push_back({i, j, p});
          }
        }
      }
      kf.proposals.push_back(detail::random_proposal(rng));
      kf.grid = detail::make_grid(rng, o, k, corners, fg);
      clip.keyframes.push_back(std::move(kf));
    }
    validate_clip(clip, ds.header, "synth");
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

}  // namespace stgraph
