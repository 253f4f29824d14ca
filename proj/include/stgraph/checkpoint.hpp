#pragma once

// Checkpoints are JSON documents: format tag, version, an echo of the model
// configuration, the seed, and every named parameter with its shape. Doubles
// are written in shortest round-trip form, so save/load is lossless.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "stgraph/config.hpp"
#include "stgraph/dataset.hpp"
#include "stgraph/error.hpp"
#include "stgraph/heads.hpp"
#include "stgraph/numgrad.hpp"

namespace stgraph {

inline constexpr const char* kCheckpointFormat = "stgraph-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"channels", c.channels},
          {"heads", c.heads},
          {"iterations", c.iterations},
          {"message_fn", message_fns_string(c.message_fns)},
          {"tau_c", c.tau_c},
          {"tau_s", c.tau_s},
          {"task", std::string(to_string(c.task))},
          {"num_action_classes", c.num_action_classes},
          {"num_object_classes", c.num_object_classes},
          {"num_relation_classes", c.num_relation_classes},
          {"ln_eps", c.ln_eps}};
}

/// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
inline ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  if (!j.is_object()) throw ParseError("model configuration must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "d") base.d = value.get<int>();
      else if (key == "channels") base.channels = value.get<int>();
      else if (key == "heads") base.heads = value.get<int>();
      else if (key == "iterations") base.iterations = value.get<int>();
      else if (key == "message_fn") base.message_fns = parse_message_fns(value.get<std::string>());
      else if (key == "tau_c") base.tau_c = value.get<int>();
      else if (key == "tau_s") base.tau_s = value.get<int>();
      else if (key == "task") base.task = parse_task(value.get<std::string>());
      else if (key == "num_action_classes") base.num_action_classes = value.get<int>();
      else if (key == "num_object_classes") base.num_object_classes = value.get<int>();
      else if (key == "num_relation_classes") base.num_relation_classes = value.get<int>();
      else if (key == "ln_eps") base.ln_eps = value.get<double>();
      else throw ParseError("unknown model configuration key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model configuration value: ") + e.what());
  }
  return base;
}

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  ng::ParameterSet params;
};

inline std::string checkpoint_json(const Checkpoint& ckpt) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"values", std::vector<double>(t.values().begin(), t.values().end())}});
  }
  const nlohmann::json doc{{"format", kCheckpointFormat},
                           {"version", kCheckpointVersion},
                           {"config", config_to_json(ckpt.config)},
                           {"seed", ckpt.seed},
                           {"params", params}};
  return doc.dump(1) + "\n";
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, checkpoint_json(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LookupError("checkpoint not found: " + path.string());
  const auto where = "checkpoint " + path.string();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat)
    throw ParseError(where + ": not an stgraph checkpoint");
  if (doc.value("version", 0) != kCheckpointVersion)
    throw ParseError(where + ": unsupported version " + doc.value("version", nlohmann::json()).dump());
  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(doc.at("config"));
    ckpt.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& p : doc.at("params")) {
      const auto name = p.at("name").get<std::string>();
      Tensor t(p.at("shape").get<std::vector<std::size_t>>(), p.at("values").get<std::vector<double>>());
      if (!ckpt.params.emplace(name, std::move(t)).second) throw ParseError(where + ": duplicate parameter " + name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(where + ": " + e.what());
  }
  ckpt.config.validate();
  const auto expected = model_parameter_shapes(ckpt.config);
  check_parameters(ckpt.params, expected);
  if (ckpt.params.size() != expected.size()) throw ParseError(where + ": unexpected extra parameters");
  return ckpt;
}

/// A checkpoint can drive `config` when every architectural field matches.
/// The temporal window (tau_c, tau_s) may differ, which is how a spatial-only
/// model is fine-tuned with temporal edges.
inline void require_compatible(const ModelConfig& saved, const ModelConfig& wanted) {
  auto fail = [](const std::string& field, auto a, auto b) {
    throw ConfigError("checkpoint " + field + " is " + a + ", configuration asks for " + b);
  };
  auto s = [](auto v) { return std::to_string(v); };
  if (saved.task != wanted.task)
    fail("task", std::string(to_string(saved.task)), std::string(to_string(wanted.task)));
  if (saved.d != wanted.d) fail("d", s(saved.d), s(wanted.d));
  if (saved.channels != wanted.channels) fail("channels", s(saved.channels), s(wanted.channels));
  if (saved.heads != wanted.heads) fail("heads", s(saved.heads), s(wanted.heads));
  if (saved.iterations != wanted.iterations) fail("iterations", s(saved.iterations), s(wanted.iterations));
  if (saved.message_fns != wanted.message_fns)
    fail("message_fn", message_fns_string(saved.message_fns), message_fns_string(wanted.message_fns));
  if (saved.task == Task::Action && saved.num_action_classes != wanted.num_action_classes)
    fail("num_action_classes", s(saved.num_action_classes), s(wanted.num_action_classes));
  if (saved.task == Task::SceneGraph && (saved.num_object_classes != wanted.num_object_classes ||
                                         saved.num_relation_classes != wanted.num_relation_classes))
    fail("scene-graph class counts", s(saved.num_object_classes) + "/" + s(saved.num_relation_classes),
         s(wanted.num_object_classes) + "/" + s(wanted.num_relation_classes));
  if (saved.ln_eps != wanted.ln_eps) fail("ln_eps", s(saved.ln_eps), s(wanted.ln_eps));
}

}  // namespace stgraph
