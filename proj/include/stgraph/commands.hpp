#pragma once

// Command implementations behind the stgraph executable. Each command takes a
// parsed RunConfig and writes its artifacts under RunConfig::out.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stgraph/checkpoint.hpp"
#include "stgraph/config.hpp"
#include "stgraph/dataset.hpp"
#include "stgraph/flops.hpp"
#include "stgraph/gradcheck.hpp"
#include "stgraph/model.hpp"
#include "stgraph/synth.hpp"
#include "stgraph/train.hpp"

namespace stgraph {

struct RunConfig {
  ModelConfig model;
  TrainOptions train;
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";
};

/// Reads {"model": {...}, "train": {...}, "seed": N, "out": "dir"}; all parts optional.
inline RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig rc;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("config " + path.string() + ": expected a JSON object");
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "model") {
        rc.model = config_from_json(value, rc.model);
      } else if (key == "train") {
        auto& t = rc.train;
        for (const auto& [k, v] : value.items()) {
          if (k == "epochs") t.epochs = v.get<int>();
          else if (k == "batch_size") t.batch_size = v.get<int>();
          else if (k == "base_lr") t.schedule.base_lr = v.get<double>();
          else if (k == "warmup_start_lr") t.schedule.warmup_start_lr = v.get<double>();
          else if (k == "warmup_epochs") t.schedule.warmup_epochs = v.get<double>();
          else if (k == "decay_epochs") t.schedule.decay_epochs = v.get<std::vector<double>>();
          else if (k == "decay_factor") t.schedule.decay_factor = v.get<double>();
          else if (k == "schedule_epochs") t.schedule.total_epochs = v.get<double>();
          else if (k == "momentum") t.momentum = v.get<double>();
          else if (k == "weight_decay") t.weight_decay = v.get<double>();
          else if (k == "lambda") t.lambda = v.get<double>();
          else throw ParseError("config " + path.string() + ": unknown train key '" + k + "'");
        }
      } else if (key == "seed") {
        rc.seed = value.get<std::uint64_t>();
      } else if (key == "out") {
        rc.out = value.get<std::string>();
      } else {
        throw ParseError("config " + path.string() + ": unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return rc;
}

// ---------------------------------------------------------------------------
// Reports: "key=value" lines in key order, plus the same content as JSON.

using Report = std::map<std::string, std::string>;

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string report_text(const Report& r) {
  std::string out;
  for (const auto& [k, v] : r) out += k + "=" + v + "\n";
  return out;
}

inline std::string report_json(const Report& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : r) j[k] = v;
  return j.dump(1) + "\n";
}

inline void write_report(const std::filesystem::path& dir, const std::string& stem, const Report& r) {
  write_file(dir / (stem + ".txt"), report_text(r));
  write_file(dir / (stem + ".json"), report_json(r));
}

inline Report eval_report(const EvalReport& e, const ModelConfig& config) {
  Report r;
  r["task"] = std::string(to_string(e.task));
  r["clips"] = std::to_string(e.clips);
  r["keyframes"] = std::to_string(e.keyframes);
  r["tau_c"] = std::to_string(config.tau_c);
  r["tau_s"] = std::to_string(config.tau_s);
  if (e.task == Task::Action) {
    r["frame_map"] = format_number(e.frame_ap.mean_ap);
    for (std::size_t c = 0; c < e.frame_ap.per_class.size(); ++c) {
      char key[32];
      std::snprintf(key, sizeof key, "ap.class%03zu", c);
      r[key] = e.frame_ap.per_class[c] ? format_number(*e.frame_ap.per_class[c]) : "none";
    }
  } else {
    for (const auto& [k, v] : e.recall) r[k] = format_number(v);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Commands.

struct TrainArtifacts {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Trains on `data` (optionally starting from `init`, whose architecture must
/// match) and writes checkpoint.json and train_log.txt under rc.out.
inline TrainArtifacts cmd_train(const RunConfig& rc, const std::filesystem::path& data,
                                const std::optional<std::filesystem::path>& init, std::ostream* progress = nullptr) {
  rc.model.validate();
  const auto ds = load_dataset(data);
  check_dataset(ds, rc.model);
  std::optional<ng::ParameterSet> initial;
  if (init) {
    auto start = load_checkpoint(*init);
    require_compatible(start.config, rc.model);
    initial = std::move(start.params);
  }
  TrainOptions opts = rc.train;
  std::string log_text;
  opts.on_epoch = [&](const EpochLog& e) {
    std::string line = "epoch=" + std::to_string(e.epoch) + " lr=" + format_number(e.lr) + " loss=" + format_number(e.loss);
    if (e.train_metric) line += " train_metric=" + format_number(*e.train_metric);
    log_text += line + "\n";
    if (progress) *progress << line << "\n" << std::flush;
  };
  auto result = train_loop(ds, rc.model, opts, rc.seed, std::move(initial));
  TrainArtifacts art{{rc.model, rc.seed, std::move(result.params)}, std::move(result.log)};
  save_checkpoint(rc.out / "checkpoint.json", art.checkpoint);
  write_file(rc.out / "train_log.txt", log_text);
  return art;
}

/// Evaluates a checkpoint on `data`; writes report.txt and report.json.
inline Report cmd_eval(const RunConfig& rc, const std::filesystem::path& checkpoint, const std::filesystem::path& data) {
  const auto ckpt = load_checkpoint(checkpoint);
  require_compatible(ckpt.config, rc.model);
  const auto ds = load_dataset(data);
  const auto report = eval_report(evaluate_dataset(ds, ckpt.params, rc.model), rc.model);
  write_report(rc.out, "report", report);
  return report;
}

/// Finite-difference check of the full model for rc.model's task.
inline Report cmd_gradcheck(const RunConfig& rc, GradcheckReport* raw = nullptr) {
  const auto g = model_gradcheck(rc.model, rc.seed);
  Report r;
  for (const auto& e : g.entries) r["rel_err." + e.name] = format_number(e.max_rel_error);
  r["max_rel_err"] = format_number(g.max_rel_error);
  r["tolerance"] = format_number(g.tolerance);
  r["status"] = g.passed() ? "pass" : "fail";
  write_report(rc.out, "gradcheck", r);
  if (raw) *raw = g;
  return r;
}

/// Attention weights of one keyframe: every (iteration, phase, function, head)
/// record per foreground node with its neighbours' ids, kinds and geometry.
inline nlohmann::json dump_attention(const RunConfig& rc, const std::filesystem::path& checkpoint,
                                     const std::filesystem::path& data, const std::string& clip_id, int keyframe_id) {
  const auto ckpt = load_checkpoint(checkpoint);
  require_compatible(ckpt.config, rc.model);
  const auto ds = load_dataset(data);
  check_dataset(ds, rc.model);
  const auto& clip = ds.clip(clip_id);
  const auto sample = prepare_clip(clip, rc.model, Mode::Eval);
  std::optional<std::size_t> group;
  for (std::size_t k = 0; k < sample.graph.keyframes.size(); ++k)
    if (sample.graph.keyframes[k].keyframe_id == keyframe_id) group = k;
  if (!group)
    throw LookupError("clip '" + clip_id + "' has no keyframe " + std::to_string(keyframe_id) + " with foreground boxes");

  ng::Tape tape(false);
  const auto out = run_inference(tape, sample.graph, ckpt.params, rc.model, true);
  auto node_json = [&](int id) {
    const auto& n = sample.graph.nodes.at(static_cast<std::size_t>(id));
    nlohmann::json j{{"id", id},
                     {"kind", std::string(to_string(n.kind))},
                     {"keyframe_id", clip.keyframes.at(static_cast<std::size_t>(n.keyframe_index)).keyframe_id},
                     {"box", {n.geometry.x1, n.geometry.y1, n.geometry.x2, n.geometry.y2}}};
    if (n.cell) j["cell"] = {n.cell->row, n.cell->col};
    return j;
  };
  nlohmann::json records = nlohmann::json::array();
  nlohmann::json gates = nlohmann::json::array();
  for (const auto& t : out.traces) {
    if (t.keyframe != *group) continue;
    for (std::size_t q = 0; q < t.query_ids.size(); ++q) {
      const auto row = t.weights.row_span(q);
      nlohmann::json rec{{"iteration", t.iteration},
                         {"phase", std::string(to_string(t.phase))},
                         {"source", t.source},
                         {"head", t.head},
                         {"node", node_json(t.query_ids[q])},
                         {"alpha", std::vector<double>(row.begin(), row.end())}};
      if (t.source == "gate") {
        gates.push_back(std::move(rec));
      } else {
        nlohmann::json nbrs = nlohmann::json::array();
        for (int id : t.neighbor_ids) nbrs.push_back(node_json(id));
        rec["neighbors"] = std::move(nbrs);
        records.push_back(std::move(rec));
      }
    }
  }
  nlohmann::json doc{{"clip_id", clip_id},
                     {"keyframe_id", keyframe_id},
                     {"message_fn", message_fns_string(rc.model.message_fns)},
                     {"records", std::move(records)},
                     {"gates", std::move(gates)}};
  write_file(rc.out / ("attention_" + clip_id + "_" + std::to_string(keyframe_id) + ".json"), doc.dump(1) + "\n");
  return doc;
}

inline Report cmd_flops(const RunConfig& rc, const SceneShape& scene) {
  const auto f = estimate_flops(rc.model, scene);
  Report r;
  for (const auto& [k, v] : f.as_map()) r["flops." + k] = std::to_string(v);
  r["scene.n_fg"] = std::to_string(scene.n_fg);
  r["scene.n_context"] = std::to_string(scene.n_context);
  r["scene.keyframes"] = std::to_string(scene.keyframes);
  return r;
}

/// Writes manifest.jsonl and its grids under rc.out.
inline std::filesystem::path cmd_synth(const RunConfig& rc, SynthOptions opts) {
  opts.seed = rc.seed;
  opts.channels = rc.model.channels;
  const auto ds = synth_dataset(opts);
  const auto manifest = rc.out / "manifest.jsonl";
  save_dataset(manifest, ds);
  return manifest;
}

}  // namespace stgraph
