// stgraph command-line entry point.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stgraph/commands.hpp"

namespace {

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> task;
  std::optional<int> tau_c, tau_s, iterations, heads, d, channels;
  std::optional<std::string> message_fn;
  std::optional<int> epochs, batch_size;
  std::optional<int> action_classes, object_classes, relation_classes;
};

// Without --config, commands that read a checkpoint start from the model
// settings stored in it; individual flags still override.
stgraph::RunConfig resolve(const CommonFlags& f, const std::optional<stgraph::ModelConfig>& saved) {
  stgraph::RunConfig rc = f.config ? stgraph::load_run_config(*f.config) : stgraph::RunConfig{};
  if (!f.config && saved) rc.model = *saved;
  auto& m = rc.model;
  if (f.seed) rc.seed = *f.seed;
  if (f.out) rc.out = *f.out;
  if (f.task) m.task = stgraph::parse_task(*f.task);
  if (f.tau_c) m.tau_c = *f.tau_c;
  if (f.tau_s) m.tau_s = *f.tau_s;
  if (f.iterations) m.iterations = *f.iterations;
  if (f.heads) m.heads = *f.heads;
  if (f.d) m.d = *f.d;
  if (f.channels) m.channels = *f.channels;
  if (f.message_fn) m.message_fns = stgraph::parse_message_fns(*f.message_fn);
  if (f.action_classes) m.num_action_classes = *f.action_classes;
  if (f.object_classes) m.num_object_classes = *f.object_classes;
  if (f.relation_classes) m.num_relation_classes = *f.relation_classes;
  if (f.epochs) rc.train.epochs = *f.epochs;
  if (f.batch_size) rc.train.batch_size = *f.batch_size;
  m.validate();
  return rc;
}

void print(const stgraph::Report& r) { std::cout << stgraph::report_text(r); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal graph message passing for video understanding"};
  app.fallthrough();
  app.require_subcommand(1);

  CommonFlags f;
  app.add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Random seed");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--task", f.task, "action | scenegraph");
  app.add_option("--tau-c", f.tau_c, "Keyframes in the temporal window (odd)");
  app.add_option("--tau-s", f.tau_s, "Keyframe stride of the temporal window");
  app.add_option("--iterations", f.iterations, "Message-passing iterations");
  app.add_option("--heads", f.heads, "Parallel heads per message function");
  app.add_option("--message-fn", f.message_fn, "gat | nonlocal | both");
  app.add_option("--d", f.d, "Node state width");
  app.add_option("--channels", f.channels, "Feature-grid channels");
  app.add_option("--action-classes", f.action_classes, "Action classes");
  app.add_option("--object-classes", f.object_classes, "Object classes");
  app.add_option("--relation-classes", f.relation_classes, "Relation classes");
  app.add_option("--epochs", f.epochs, "Training epochs");
  app.add_option("--batch-size", f.batch_size, "Clips per step (default 8 / tau_c)");

  std::string data, checkpoint, clip_id;
  std::optional<std::string> init;
  int keyframe_id = 0;

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoint.json and train_log.txt");
  train->add_option("--data", data, "Manifest (JSON Lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--init", init, "Start from this checkpoint (e.g. a spatial-only stage)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.txt and report.json");
  eval->add_option("--data", data, "Manifest (JSON Lines)")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");

  auto* dump = app.add_subcommand("dump-attention", "Export attention weights of one keyframe");
  dump->add_option("--data", data, "Manifest (JSON Lines)")->required()->check(CLI::ExistingFile);
  dump->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  dump->add_option("--clip", clip_id, "Clip id")->required();
  dump->add_option("--keyframe", keyframe_id, "Keyframe id")->required();

  stgraph::SceneShape scene{4, 16, 1};
  auto* flops = app.add_subcommand("flops", "Estimate multiply-adds of the graph model");
  flops->add_option("--n-fg", scene.n_fg, "Foreground nodes per keyframe")->capture_default_str();
  flops->add_option("--n-context", scene.n_context, "Context nodes per keyframe")->capture_default_str();
  flops->add_option("--keyframes", scene.keyframes, "Keyframes processed")->capture_default_str();

  stgraph::SynthOptions so;
  std::string kind = "action-spatial";
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic dataset (manifest.jsonl + grids)");
  synth->add_option("--kind", kind, "action-spatial | action-temporal | scenegraph")->capture_default_str();
  synth->add_option("--clips", so.clips, "Number of clips")->capture_default_str();
  synth->add_option("--keyframes", so.keyframes, "Keyframes per clip")->capture_default_str();
  synth->add_option("--stride", so.stride, "Label offset for action-temporal")->capture_default_str();
  synth->add_option("--prefix", so.prefix, "Clip id prefix")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<stgraph::ModelConfig> saved;
    if (*eval || *dump) saved = stgraph::load_checkpoint(checkpoint).config;
    const auto rc = resolve(f, saved);
    if (*train) {
      std::optional<std::filesystem::path> init_path;
      if (init) init_path = *init;
      stgraph::cmd_train(rc, data, init_path, &std::cout);
      std::cout << "checkpoint=" << (rc.out / "checkpoint.json").string() << "\n";
    } else if (*eval) {
      print(stgraph::cmd_eval(rc, checkpoint, data));
    } else if (app.got_subcommand("gradcheck")) {
      const auto r = stgraph::cmd_gradcheck(rc);
      print(r);
      return r.at("status") == "pass" ? 0 : 1;
    } else if (*dump) {
      stgraph::dump_attention(rc, checkpoint, data, clip_id, keyframe_id);
      std::cout << "wrote " << (rc.out / ("attention_" + clip_id + "_" + std::to_string(keyframe_id) + ".json")).string()
                << "\n";
    } else if (*flops) {
      const auto r = stgraph::cmd_flops(rc, scene);
      print(r);
      if (f.out) stgraph::write_report(rc.out, "flops", r);
    } else if (*synth) {
      so.kind = stgraph::parse_synth_kind(kind);
      if (f.action_classes) so.num_action_classes = *f.action_classes;
      if (f.object_classes) so.num_object_classes = *f.object_classes;
      if (f.relation_classes) so.num_relation_classes = *f.relation_classes;
      std::cout << "manifest=" << stgraph::cmd_synth(rc, so).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
