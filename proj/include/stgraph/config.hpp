#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stgraph/error.hpp"

namespace stgraph {

enum class MessageFn { NonLocal, Gat };
enum class Task { Action, SceneGraph };
enum class Phase { Spatial, Temporal };

inline std::string_view to_string(MessageFn fn) { return fn == MessageFn::Gat ? "gat" : "nonlocal"; }
inline std::string_view to_string(Task task) { return task == Task::Action ? "action" : "scenegraph"; }
inline std::string_view to_string(Phase phase) {
  return phase == Phase::Spatial ? "spatial" : "temporal";
}

inline Task parse_task(std::string_view s) {
  if (s == "action") return Task::Action;
  if (s == "scenegraph") return Task::SceneGraph;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected action or scenegraph)");
}

/// "gat", "nonlocal" or "both".
inline std::vector<MessageFn> parse_message_fns(std::string_view s) {
  if (s == "gat") return {MessageFn::Gat};
  if (s == "nonlocal") return {MessageFn::NonLocal};
  if (s == "both") return {MessageFn::Gat, MessageFn::NonLocal};
  throw ConfigError("unknown message function '" + std::string(s) + "' (expected gat, nonlocal or both)");
}

inline std::string message_fns_string(const std::vector<MessageFn>& fns) {
  if (fns.size() == 2) return "both";
  return fns.empty() ? "" : std::string(to_string(fns.front()));
}

struct ModelConfig {
  int d = 16;           // node state width
  int channels = 8;     // feature-grid channels c
  int heads = 4;        // parallel messages per message function
  int iterations = 1;   // untied message-passing iterations I
  std::vector<MessageFn> message_fns{MessageFn::Gat};
  int tau_c = 1;        // keyframes in the temporal window (odd)
  int tau_s = 1;        // keyframe stride
  Task task = Task::Action;
  int num_action_classes = 3;
  int num_object_classes = 35;
  int num_relation_classes = 25;
  double ln_eps = 1e-5;
  std::uint64_t seed = 0;

  /// Number of parallel messages combined per node and phase.
  int parallel_messages() const { return heads * static_cast<int>(message_fns.size()); }

  bool uses(MessageFn fn) const {
    return std::find(message_fns.begin(), message_fns.end(), fn) != message_fns.end();
  }

  void validate() const {
    if (d < 1) throw ConfigError("d must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (heads < 1) throw ConfigError("heads must be >= 1");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (message_fns.empty()) throw ConfigError("at least one message function is required");
    validate_temporal(tau_c, tau_s);
    if (task == Task::Action && num_action_classes < 1)
      throw ConfigError("num_action_classes must be >= 1");
    if (task == Task::SceneGraph && (num_object_classes < 1 || num_relation_classes < 1))
      throw ConfigError("object and relation class counts must be >= 1");
    if (!(ln_eps >= 0.0)) throw ConfigError("ln_eps must be >= 0");
  }

  static void validate_temporal(int tau_c, int tau_s) {
    if (tau_c < 1 || tau_c % 2 == 0)
      throw ConfigError("tau_c must be an odd positive integer, got " + std::to_string(tau_c));
    if (tau_s < 1) throw ConfigError("tau_s must be >= 1, got " + std::to_string(tau_s));
  }
};

/// Parameter names. One namespace per (iteration, phase) keeps iterations untied.
namespace param_names {

inline std::string prefix(int iteration, Phase phase) {
  return "it" + std::to_string(iteration) + "." + std::string(to_string(phase));
}

inline std::string head(int iteration, Phase phase, MessageFn fn, int h) {
  return prefix(iteration, phase) + "." + std::string(to_string(fn)) + std::to_string(h);
}

inline std::string ln_scale(int iteration, Phase phase) { return prefix(iteration, phase) + ".ln.scale"; }
inline std::string ln_shift(int iteration, Phase phase) { return prefix(iteration, phase) + ".ln.shift"; }
inline std::string gate(int iteration, Phase phase) { return prefix(iteration, phase) + ".gate"; }

inline constexpr const char* kBoxProjW = "proj.box.W";
inline constexpr const char* kBoxProjB = "proj.box.b";
inline constexpr const char* kGridProjW = "proj.grid.W";
inline constexpr const char* kGridProjB = "proj.grid.b";
inline constexpr const char* kActionW = "readout.action.W";
inline constexpr const char* kActionB = "readout.action.b";
inline constexpr const char* kObjectW = "readout.object.W";
inline constexpr const char* kObjectB = "readout.object.b";
inline constexpr const char* kRelationW = "readout.relation.W";
inline constexpr const char* kRelationB = "readout.relation.b";

}  // namespace param_names

}  // namespace stgraph
