#pragma once

// Spatio-temporal graph construction: node featurisation from a feature grid
// and boxes, spatial neighbourhoods (all nodes of the keyframe) and temporal
// neighbourhoods (foreground nodes at strided keyframe offsets).

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stgraph/config.hpp"
#include "stgraph/error.hpp"
#include "stgraph/numgrad.hpp"
#include "stgraph/tensor.hpp"

namespace stgraph {

/// Axis-aligned box in normalised [0, 1] image coordinates.
struct Box {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  bool valid() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    return in_unit(x1) && in_unit(y1) && in_unit(x2) && in_unit(y2) && x1 < x2 && y1 < y2;
  }

  void validate(const std::string& what = "box") const {
    if (!valid()) {
      throw ValidationError(what + " [" + std::to_string(x1) + ", " + std::to_string(y1) + ", " +
                            std::to_string(x2) + ", " + std::to_string(y2) +
                            "] needs 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1");
    }
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Backbone output stand-in: a t x h x w x c volume for one keyframe.
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(Tensor values, int keyframe_id) : values_(std::move(values)), keyframe_id_(keyframe_id) {
    if (values_.rank() != 4) {
      throw ShapeError("feature grid must be t x h x w x c, got " + values_.shape_string());
    }
    for (auto s : values_.shape())
      if (s == 0) throw ShapeError("feature grid has an empty dimension " + values_.shape_string());
    values_.require_finite("feature grid");
  }

  std::size_t t() const { return values_.shape()[0]; }
  std::size_t h() const { return values_.shape()[1]; }
  std::size_t w() const { return values_.shape()[2]; }
  std::size_t c() const { return values_.shape()[3]; }
  int keyframe_id() const { return keyframe_id_; }
  const Tensor& values() const { return values_; }

  double at(std::size_t ti, std::size_t y, std::size_t x, std::size_t ch) const {
    return values_[((ti * h() + y) * w() + x) * c() + ch];
  }

  /// Normalised centre of cell (row, col).
  double center_x(std::size_t col) const { return (static_cast<double>(col) + 0.5) / static_cast<double>(w()); }
  double center_y(std::size_t row) const { return (static_cast<double>(row) + 0.5) / static_cast<double>(h()); }

  Box cell_box(std::size_t row, std::size_t col) const {
    return Box{static_cast<double>(col) / w(), static_cast<double>(row) / h(),
               static_cast<double>(col + 1) / w(), static_cast<double>(row + 1) / h()};
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  Tensor values_;
  int keyframe_id_ = 0;
};

/// Mean channel vector (1 x c) over every cell whose centre lies inside `box`,
/// across all t. Falls back to the single cell nearest the box centre when no
/// centre is covered.
inline Tensor pool_box_features(const FeatureGrid& grid, const Box& box) {
  box.validate("pooled box");
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t y = 0; y < grid.h(); ++y) {
    const double cy = grid.center_y(y);
    if (cy < box.y1 || cy > box.y2) continue;
    for (std::size_t x = 0; x < grid.w(); ++x) {
      const double cx = grid.center_x(x);
      if (cx >= box.x1 && cx <= box.x2) cells.emplace_back(y, x);
    }
  }
  if (cells.empty()) {
    const double bx = 0.5 * (box.x1 + box.x2), by = 0.5 * (box.y1 + box.y2);
    double best = std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> nearest{0, 0};
    for (std::size_t y = 0; y < grid.h(); ++y) {
      for (std::size_t x = 0; x < grid.w(); ++x) {
        const double dx = grid.center_x(x) - bx, dy = grid.center_y(y) - by;
        const double dist = dx * dx + dy * dy;
        if (dist < best) {
          best = dist;
          nearest = {y, x};
        }
      }
    }
    cells.push_back(nearest);
  }
  Tensor out = Tensor::zeros(1, grid.c());
  for (std::size_t ti = 0; ti < grid.t(); ++ti)
    for (auto [y, x] : cells)
      for (std::size_t ch = 0; ch < grid.c(); ++ch) out[ch] += grid.at(ti, y, x, ch);
  const double count = static_cast<double>(cells.size() * grid.t());
  for (auto& v : out.values()) v /= count;
  return out;
}

/// Temporally averaged grid as an (h*w) x c matrix, row-major over cells.
inline Tensor grid_cell_features(const FeatureGrid& grid) {
  Tensor out = Tensor::zeros(grid.h() * grid.w(), grid.c());
  for (std::size_t ti = 0; ti < grid.t(); ++ti)
    for (std::size_t y = 0; y < grid.h(); ++y)
      for (std::size_t x = 0; x < grid.w(); ++x)
        for (std::size_t ch = 0; ch < grid.c(); ++ch) out(y * grid.w() + x, ch) += grid.at(ti, y, x, ch);
  const double inv = 1.0 / static_cast<double>(grid.t());
  for (auto& v : out.values()) v *= inv;
  return out;
}

enum class NodeKind { Foreground, ContextImplicit, ContextExplicit };

inline std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Foreground: return "foreground";
    case NodeKind::ContextImplicit: return "implicit";
    case NodeKind::ContextExplicit: return "explicit";
  }
  return "?";
}

struct CellCoord {
  std::size_t row = 0, col = 0;
  friend bool operator==(const CellCoord&, const CellCoord&) = default;
};

struct Node {
  int id = 0;
  NodeKind kind = NodeKind::Foreground;
  int keyframe_index = 0;  // position of the keyframe within its clip
  Box geometry;            // source box, or the cell's footprint for implicit context
  std::optional<CellCoord> cell;
};

/// Per-keyframe slice of the graph: raw (pre-projection) features and node ids.
/// Rows of the spatial neighbour matrix are fg_ids, then implicit_ids, then explicit_ids.
struct KeyframeGroup {
  int keyframe_id = 0;
  int keyframe_index = 0;
  Tensor fg_features;        // n x c
  Tensor grid_features;      // h*w x c
  Tensor proposal_features;  // p x c
  std::vector<int> fg_ids;
  std::vector<int> implicit_ids;
  std::vector<int> explicit_ids;
  std::vector<std::size_t> temporal_sources;  // indices into SpatioTemporalGraph::keyframes

  std::vector<int> all_ids() const {
    std::vector<int> ids = fg_ids;
    ids.insert(ids.end(), implicit_ids.begin(), implicit_ids.end());
    ids.insert(ids.end(), explicit_ids.begin(), explicit_ids.end());
    return ids;
  }
  std::size_t context_count() const { return implicit_ids.size() + explicit_ids.size(); }
};

struct SpatioTemporalGraph {
  std::vector<Node> nodes;
  std::vector<KeyframeGroup> keyframes;
  std::vector<std::vector<int>> spatial;   // per node id; empty for context nodes
  std::vector<std::vector<int>> temporal;  // per node id; empty for context nodes
  int tau_c = 1;
  int tau_s = 1;

  const std::vector<int>& spatial_neighbors(int id) const { return spatial.at(static_cast<std::size_t>(id)); }
  const std::vector<int>& temporal_neighbors(int id) const { return temporal.at(static_cast<std::size_t>(id)); }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (const auto& k : keyframes) n += k.fg_ids.size();
    return n;
  }
};

/// One keyframe's inputs to graph construction.
struct KeyframeInput {
  int keyframe_id = 0;
  const FeatureGrid* grid = nullptr;
  std::vector<Box> foreground;
  std::vector<Box> proposals;
};

/// Spatial neighbourhoods for one keyframe's nodes, indexed like `kinds`:
/// every foreground node sees all nodes (itself included); context nodes see none.
inline std::vector<std::vector<int>> build_spatial_neighborhoods(std::span<const NodeKind> kinds,
                                                                 std::span<const int> ids) {
  std::vector<std::vector<int>> out(kinds.size());
  std::vector<int> everyone(ids.begin(), ids.end());
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == NodeKind::Foreground) out[i] = everyone;
  return out;
}

/// For keyframes at clip positions `positions` (strictly increasing), returns
/// for each keyframe the indices of the keyframes at offsets t * tau_s,
/// ceil(-tau_c/2) <= t <= floor(tau_c/2), t != 0. Offsets landing outside the
/// clip or on an excluded keyframe are dropped.
inline std::vector<std::vector<std::size_t>> build_temporal_neighborhoods(std::span<const int> positions,
                                                                          int tau_c, int tau_s) {
  ModelConfig::validate_temporal(tau_c, tau_s);
  const int half = tau_c / 2;
  std::vector<std::vector<std::size_t>> out(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    for (int t = -half; t <= half; ++t) {
      if (t == 0) continue;
      const int target = positions[k] + t * tau_s;
      for (std::size_t j = 0; j < positions.size(); ++j) {
        if (positions[j] == target) {
          out[k].push_back(j);
          break;
        }
      }
    }
  }
  return out;
}

/// Builds the clip graph. Keyframes without foreground boxes take no part;
/// temporal offsets are measured in clip positions (index into `keyframes`).
inline SpatioTemporalGraph build_graph(std::span<const KeyframeInput> keyframes, int tau_c, int tau_s) {
  ModelConfig::validate_temporal(tau_c, tau_s);
  SpatioTemporalGraph g;
  g.tau_c = tau_c;
  g.tau_s = tau_s;
  std::vector<int> positions;
  std::optional<std::size_t> channels;
  for (std::size_t pos = 0; pos < keyframes.size(); ++pos) {
    const auto& in = keyframes[pos];
    if (in.foreground.empty()) continue;
    if (in.grid == nullptr) throw ContractError("keyframe " + std::to_string(in.keyframe_id) + " has no grid");
    const auto& grid = *in.grid;
    if (channels && *channels != grid.c()) {
      throw ShapeError("keyframe " + std::to_string(in.keyframe_id) + " grid has " +
                       std::to_string(grid.c()) + " channels, expected " + std::to_string(*channels));
    }
    channels = grid.c();

    KeyframeGroup group;
    group.keyframe_id = in.keyframe_id;
    group.keyframe_index = static_cast<int>(pos);
    group.fg_features = Tensor::zeros(in.foreground.size(), grid.c());
    group.proposal_features = Tensor::zeros(in.proposals.size(), grid.c());
    group.grid_features = grid_cell_features(grid);

    auto add_node = [&](NodeKind kind, Box geometry, std::optional<CellCoord> cell) {
      const int id = static_cast<int>(g.nodes.size());
      g.nodes.push_back(Node{id, kind, group.keyframe_index, geometry, cell});
      return id;
    };
    for (std::size_t i = 0; i < in.foreground.size(); ++i) {
      const auto pooled = pool_box_features(grid, in.foreground[i]);
      std::copy(pooled.values().begin(), pooled.values().end(), group.fg_features.row_span(i).begin());
      group.fg_ids.push_back(add_node(NodeKind::Foreground, in.foreground[i], std::nullopt));
    }
    for (std::size_t y = 0; y < grid.h(); ++y)
      for (std::size_t x = 0; x < grid.w(); ++x)
        group.implicit_ids.push_back(add_node(NodeKind::ContextImplicit, grid.cell_box(y, x), CellCoord{y, x}));
    for (std::size_t i = 0; i < in.proposals.size(); ++i) {
      const auto pooled = pool_box_features(grid, in.proposals[i]);
      std::copy(pooled.values().begin(), pooled.values().end(),
                group.proposal_features.row_span(i).begin());
      group.explicit_ids.push_back(add_node(NodeKind::ContextExplicit, in.proposals[i], std::nullopt));
    }
    positions.push_back(group.keyframe_index);
    g.keyframes.push_back(std::move(group));
  }

  const auto sources = build_temporal_neighborhoods(positions, tau_c, tau_s);
  g.spatial.assign(g.nodes.size(), {});
  g.temporal.assign(g.nodes.size(), {});
  for (std::size_t k = 0; k < g.keyframes.size(); ++k) {
    auto& group = g.keyframes[k];
    group.temporal_sources = sources[k];
    const auto ids = group.all_ids();
    std::vector<NodeKind> kinds;
    for (int id : ids) kinds.push_back(g.nodes[static_cast<std::size_t>(id)].kind);
    const auto adjacency = build_spatial_neighborhoods(kinds, ids);
    for (std::size_t i = 0; i < ids.size(); ++i) g.spatial[static_cast<std::size_t>(ids[i])] = adjacency[i];

    std::vector<int> temporal_ids;
    for (auto src : group.temporal_sources) {
      const auto& f = g.keyframes[src].fg_ids;
      temporal_ids.insert(temporal_ids.end(), f.begin(), f.end());
    }
    for (int id : group.fg_ids) g.temporal[static_cast<std::size_t>(id)] = temporal_ids;
  }
  return g;
}

/// Projected node states of one keyframe.
struct KeyframeStates {
  ng::Var foreground;  // n x d
  ng::Var context;     // m x d (implicit rows, then explicit rows)
};

/// Linear projections c -> d: foreground and explicit-proposal features share
/// the box projection, implicit grid cells use their own.
inline KeyframeStates project_nodes(ng::Tape& tape, const KeyframeGroup& group, const ng::ParameterSet& params) {
  using namespace param_names;
  auto lookup = [&](const char* name) -> ng::Var {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError(std::string("missing parameter ") + name);
    return tape.parameter(name, it->second);
  };
  const auto box_w = lookup(kBoxProjW), box_b = lookup(kBoxProjB);
  const auto grid_w = lookup(kGridProjW), grid_b = lookup(kGridProjB);
  if (box_w.rows() != group.fg_features.cols()) {
    throw ConfigError("projection expects " + std::to_string(box_w.rows()) + " channels, features have " +
                      std::to_string(group.fg_features.cols()));
  }
  KeyframeStates s;
  s.foreground = ng::add_row(ng::matmul(tape.constant(group.fg_features), box_w), box_b);
  std::vector<ng::Var> ctx{ng::add_row(ng::matmul(tape.constant(group.grid_features), grid_w), grid_b)};
  if (group.proposal_features.rows() > 0)
    ctx.push_back(ng::add_row(ng::matmul(tape.constant(group.proposal_features), box_w), box_b));
  s.context = ng::concat_rows(ctx);
  return s;
}

/// Nodes of a single keyframe with their initial states (one row per node, ordered
/// foreground, implicit context, explicit context).
struct InitializedNodes {
  std::vector<Node> nodes;
  Tensor states;
};

inline InitializedNodes init_nodes(const FeatureGrid& grid, std::span<const Box> fg_boxes,
                                   std::span<const Box> proposals, const ng::ParameterSet& params,
                                   const ModelConfig& config) {
  if (fg_boxes.empty()) throw ContractError("no foreground boxes in keyframe " + std::to_string(grid.keyframe_id()));
  KeyframeInput in{grid.keyframe_id(), &grid, {fg_boxes.begin(), fg_boxes.end()},
                   {proposals.begin(), proposals.end()}};
  auto g = build_graph(std::span<const KeyframeInput>(&in, 1), 1, 1);
  ng::Tape tape(false);
  const auto s = project_nodes(tape, g.keyframes.front(), params);
  const auto all = ng::concat_rows(std::vector<ng::Var>{s.foreground, s.context});
  if (all.cols() != static_cast<std::size_t>(config.d)) {
    throw ConfigError("projected width " + std::to_string(all.cols()) + " != d " + std::to_string(config.d));
  }
  return InitializedNodes{std::move(g.nodes), all.value()};
}

}  // namespace stgraph
