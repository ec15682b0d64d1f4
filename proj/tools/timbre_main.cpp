// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "timbre/config.hpp"
#include "timbre/gradcheck.hpp"
#include "timbre/infer.hpp"
#include "timbre/ingest.hpp"
#include "timbre/metrics.hpp"
#include "timbre/model.hpp"
#include "timbre/synth.hpp"
#include "timbre/train.hpp"

namespace fs = std::filesystem;
using timbre::json;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
};

timbre::CliConfig load_config(const GlobalArgs& g) {
  timbre::CliConfig c = g.config_path.empty() ? timbre::CliConfig{}
                                              : timbre::load_cli_config(g.config_path);
  if (g.seed_set) c.seed = g.seed;
  if (!g.out_dir.empty()) c.paths.out_dir = g.out_dir;
  return c;
}

void emit(const json& j, const GlobalArgs& g) {
  if (!g.quiet) std::cout << j.dump(2) << "\n";
}

// Two-stage deterministic group split: first carve the test set, then a
// validation set from what is left.
void split_train_val_test(std::vector<timbre::ManifestEntry>& entries, double test_fraction,
                          double val_fraction, uint64_t seed) {
  using timbre::Split;
  if (test_fraction > 0) {
    timbre::make_splits(entries, test_fraction, timbre::derive_seed(seed, {0x74657374ULL}));
    for (auto& e : entries)
      if (e.split == Split::kVal) e.split = Split::kTest;
  }
  if (val_fraction > 0) {
    std::vector<size_t> train_idx;
    std::vector<timbre::ManifestEntry> train;
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == Split::kTrain) {
        train_idx.push_back(i);
        train.push_back(entries[i]);
      }
    if (train.size() > 1) {
      timbre::make_splits(train, val_fraction, timbre::derive_seed(seed, {0x76616cULL}));
      for (size_t k = 0; k < train.size(); ++k) entries[train_idx[k]].split = train[k].split;
    }
  }
}

int cmd_synth_data(const GlobalArgs& g, const std::string& out_opt) {
  auto cfg = load_config(g);
  const fs::path out = out_opt.empty() ? fs::path(cfg.paths.data_dir) / "synth" : fs::path(out_opt);
  const auto& cc = cfg.corpus;

  auto specs = timbre::default_instrument_specs(cc.n_families, cc.per_family, cfg.seed);
  auto mono = timbre::synth_corpus(specs, cc.notes_per_instrument, cc.duration_s, cfg.seed,
                                   (out / "mono").string());
  auto mono_report = timbre::make_splits(mono.entries, 0.1, cfg.seed);
  timbre::save_manifest((out / "mono" / "manifest.jsonl").string(), mono.entries);
  timbre::save_label_space((out / "mono" / "labels.json").string(), mono.labels);

  auto poly = timbre::make_polyphonic(mono.entries, cc.poly_min, cc.poly_max, cc.n_mixtures,
                                      timbre::derive_seed(cfg.seed, {0x706f6c79ULL}),
                                      (out / "poly").string(), cc.mix_lufs);
  split_train_val_test(poly, 0.3, 0.15, cfg.seed);
  timbre::save_manifest((out / "poly" / "manifest.jsonl").string(), poly);
  timbre::LabelSpace poly_labels;
  poly_labels.coarse_names = mono.labels.coarse_names;
  timbre::save_label_space((out / "poly" / "labels.json").string(), poly_labels);

  json j;
  j["out"] = out.string();
  j["instruments"] = specs.size();
  j["mono_entries"] = mono.entries.size();
  j["mono_val_groups"] = mono_report.n_val_groups;
  j["poly_entries"] = poly.size();
  emit(j, g);
  return 0;
}

int cmd_ingest_nsynth(const GlobalArgs& g, const std::string& root, const std::string& out_opt) {
  auto cfg = load_config(g);
  const fs::path out =
      out_opt.empty() ? fs::path(cfg.paths.data_dir) / "nsynth" : fs::path(out_opt);
  auto res = timbre::ingest_nsynth(root, cfg.seed);
  fs::create_directories(out);
  timbre::save_manifest((out / "manifest.jsonl").string(), res.entries);
  timbre::save_label_space((out / "labels.json").string(), res.labels);
  for (const auto& e : res.errors)
    std::fprintf(stderr, "skipped %s: %s\n", e.id.c_str(), e.message.c_str());
  json j;
  j["out"] = out.string();
  j["entries"] = res.entries.size();
  j["skipped"] = res.errors.size();
  j["instruments"] = res.labels.fine_names.size();
  j["families"] = res.labels.coarse_names.size();
  emit(j, g);
  return 0;
}

int cmd_ingest_irmas(const GlobalArgs& g, const std::string& root, const std::string& mode,
                     const std::string& out_opt) {
  auto cfg = load_config(g);
  const fs::path out = out_opt.empty() ? fs::path(cfg.paths.data_dir) / ("irmas_" + mode)
                                       : fs::path(out_opt);
  auto m = mode == "train" ? timbre::IrmasMode::kTrain : timbre::IrmasMode::kTest;
  auto res = timbre::ingest_irmas(root, m);
  fs::create_directories(out);
  timbre::save_manifest((out / "manifest.jsonl").string(), res.entries);
  timbre::save_label_space((out / "labels.json").string(), res.labels);
  for (const auto& e : res.errors)
    std::fprintf(stderr, "skipped %s: %s\n", e.id.c_str(), e.message.c_str());
  json j;
  j["out"] = out.string();
  j["entries"] = res.entries.size();
  j["skipped"] = res.errors.size();
  emit(j, g);
  return 0;
}

int cmd_pretrain(const GlobalArgs& g, const std::string& manifest, const std::string& labels_path,
                 const std::string& out_opt, double data_fraction, int epochs_opt, int batch_opt) {
  auto cfg = load_config(g);
  auto rc = timbre::make_run_config(cfg, timbre::Phase::kPretrain);
  rc.out_dir = out_opt.empty() ? (fs::path(cfg.paths.out_dir) / "pretrain").string() : out_opt;
  rc.quiet = g.quiet;
  if (epochs_opt > 0) rc.epochs = epochs_opt;
  if (batch_opt > 0) rc.batch_size = batch_opt;
  if (rc.warmup_epochs >= rc.epochs) rc.warmup_epochs = std::max(0, rc.epochs - 1);

  auto entries = timbre::load_manifest(manifest);
  auto labels = timbre::load_label_space(labels_path);
  if (data_fraction < 1.0)
    entries = timbre::subset_train_groups(entries, data_fraction, cfg.seed);
  auto ckpt = timbre::pretrain(rc, entries, labels);

  json j;
  j["checkpoint"] = (fs::path(rc.out_dir) / "checkpoint.tfv1").string();
  j["steps"] = ckpt.step;
  j["classes"] = ckpt.config.n_out;
  emit(j, g);
  return 0;
}

int cmd_finetune(const GlobalArgs& g, const std::string& manifest, const std::string& labels_path,
                 const std::string& out_opt, const std::string& init_path, double data_fraction,
                 int epochs_opt, int batch_opt) {
  auto cfg = load_config(g);
  auto rc = timbre::make_run_config(cfg, timbre::Phase::kFinetune, !init_path.empty());
  rc.out_dir = out_opt.empty() ? (fs::path(cfg.paths.out_dir) / "finetune").string() : out_opt;
  rc.quiet = g.quiet;
  if (epochs_opt > 0) rc.epochs = epochs_opt;
  if (batch_opt > 0) rc.batch_size = batch_opt;
  if (rc.warmup_epochs >= rc.epochs) rc.warmup_epochs = std::max(0, rc.epochs - 1);

  auto entries = timbre::load_manifest(manifest);
  auto labels = timbre::load_label_space(labels_path);
  if (data_fraction < 1.0)
    entries = timbre::subset_train_groups(entries, data_fraction, cfg.seed);

  timbre::Checkpoint init;
  const timbre::Checkpoint* initp = nullptr;
  if (!init_path.empty()) {
    init = timbre::load_checkpoint(init_path);
    rc.model = init.config;  // body architecture comes from the checkpoint
    initp = &init;
  }
  auto ckpt = timbre::finetune(rc, entries, labels, initp);

  json j;
  j["checkpoint"] = (fs::path(rc.out_dir) / "checkpoint.tfv1").string();
  j["steps"] = ckpt.step;
  j["labels"] = ckpt.config.n_out;
  j["init"] = init_path.empty() ? "random" : init_path;
  emit(j, g);
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& manifest, const std::string& labels_path,
             const std::string& ckpt_path, const std::string& out_opt,
             const std::string& threshold_on_opt, const std::string& embeddings_opt) {
  auto cfg = load_config(g);
  const fs::path out = out_opt.empty() ? fs::path(cfg.paths.out_dir) / "eval" : fs::path(out_opt);
  const std::string threshold_on =
      threshold_on_opt.empty() ? cfg.eval.threshold_on : threshold_on_opt;
  if (threshold_on != "test" && threshold_on != "val")
    throw timbre::ConfigError("eval: --threshold-on must be test or val");

  auto ckpt = timbre::load_checkpoint(ckpt_path);
  auto entries = timbre::load_manifest(manifest);
  auto labels = timbre::load_label_space(labels_path);

  timbre::InferOptions opt;
  opt.window_s = cfg.eval.window_s;
  opt.overlap = cfg.eval.overlap;
  opt.batch_clips = cfg.eval.batch_clips;

  std::vector<timbre::ManifestEntry> test_e, val_e;
  for (const auto& e : entries) {
    if (e.split == timbre::Split::kTest) test_e.push_back(e);
    if (e.split == timbre::Split::kVal) val_e.push_back(e);
  }
  if (test_e.empty()) throw timbre::ConfigError("eval: manifest has no test entries");

  auto sm = timbre::score_manifest(ckpt.config, ckpt.params, test_e, labels, opt);
  fs::create_directories(out);
  timbre::save_scores((out / "scores.jsonl").string(), sm);

  timbre::SweepResult sweep;
  if (threshold_on == "val") {
    if (val_e.empty()) throw timbre::ConfigError("eval: --threshold-on val needs val entries");
    auto smv = timbre::score_manifest(ckpt.config, ckpt.params, val_e, labels, opt);
    sweep = timbre::sweep_threshold(smv);
  } else {
    sweep = timbre::sweep_threshold(sm);
  }

  auto report = timbre::f1_scores(sm, sweep.micro_threshold);
  try {
    report.lrap = timbre::lrap(sm);
  } catch (const timbre::ConfigError&) {
    report.lrap = -1.0;
  }
  try {
    auto conf = timbre::confusion_single(sm);
    report.confusion = conf.matrix;
    report.accuracy = conf.accuracy;
  } catch (const timbre::ConfigError&) {
  }

  json j = report.to_json();
  j["threshold_on"] = threshold_on;
  j["sweep"] = json{{"micro_threshold", sweep.micro_threshold},
                    {"micro_best_f1", sweep.micro_best.micro_f1},
                    {"macro_threshold", sweep.macro_threshold},
                    {"macro_best_f1", sweep.macro_best.macro_f1}};
  {
    std::ofstream f(out / "report.json");
    f << j.dump(2) << "\n";
  }
  {
    std::ofstream f(out / "per_class.csv");
    f << report.per_class_csv();
  }
  if (!embeddings_opt.empty())
    timbre::export_embeddings(ckpt.config, ckpt.params, test_e, labels, embeddings_opt, opt);
  emit(j, g);
  return 0;
}

int cmd_params(const GlobalArgs& g, const std::string& ckpt_path, bool compare) {
  timbre::ModelConfig m;
  if (!ckpt_path.empty()) {
    m = timbre::load_checkpoint(ckpt_path).config;
  } else {
    auto cfg = load_config(g);
    m = cfg.model;
    if (m.n_out < 2) m.n_out = 11;
  }
  m.validate();
  auto counts = timbre::count_params(m);

  json j;
  j["frontend"] = counts.frontend;
  j["backbone_conv"] = counts.backbone_conv;
  j["backbone_bn"] = counts.backbone_bn;
  j["lde"] = counts.lde;
  j["head"] = counts.head;
  j["total"] = counts.total;
  if (compare) {
    timbre::ModelConfig unshared = m;
    unshared.encoder.shared_blocks = false;
    timbre::ModelConfig shared = m;
    shared.encoder.shared_blocks = true;
    auto cu = timbre::count_params(unshared);
    auto cs = timbre::count_params(shared);
    j["conv_weights_unshared"] = cu.backbone_conv;
    j["conv_weights_shared"] = cs.backbone_conv;
    j["sharing_reduction"] = 1.0 - double(cs.backbone_conv) / double(cu.backbone_conv);
    j["total_unshared"] = cu.total;
    j["total_shared"] = cs.total;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const GlobalArgs& g) {
  auto results = timbre::run_all_grad_checks();
  bool all = true;
  json arr = json::array();
  for (const auto& r : results) {
    all = all && r.pass;
    arr.push_back({{"name", r.name},
                   {"pass", r.pass},
                   {"max_abs_diff", r.max_abs_diff},
                   {"max_rel_diff", r.max_rel_diff}});
    if (!g.quiet)
      std::fprintf(stderr, "%-20s %s  (abs %.3e, rel %.3e)\n", r.name.c_str(),
                   r.pass ? "ok" : "FAIL", r.max_abs_diff, r.max_rel_diff);
  }
  json j;
  j["checks"] = arr;
  j["pass"] = all;
  emit(j, g);
  return all ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raw-waveform predominant instrument recognition toolkit"};
  app.require_subcommand(1);
  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", g.seed, "override config seed");
  app.add_option("--out", g.out_dir, "override output directory root");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic corpus");
  std::string synth_out;
  synth->add_option("--out", synth_out, "corpus directory");

  auto* nsynth = app.add_subcommand("ingest-nsynth", "index a note-level dataset directory");
  std::string nsynth_root, nsynth_out;
  nsynth->add_option("--root", nsynth_root, "dataset root")->required();
  nsynth->add_option("--out", nsynth_out, "manifest directory");

  auto* irmas = app.add_subcommand("ingest-irmas", "index a multi-label recording dataset");
  std::string irmas_root, irmas_mode = "train", irmas_out;
  irmas->add_option("--root", irmas_root, "dataset root")->required();
  irmas->add_option("--mode", irmas_mode, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  irmas->add_option("--out", irmas_out, "manifest directory");

  auto* pre = app.add_subcommand("pretrain", "single-label pre-training");
  std::string pre_manifest, pre_labels, pre_out;
  double pre_fraction = 1.0;
  int pre_epochs = 0, pre_batch = 0;
  pre->add_option("--manifest", pre_manifest, "training manifest")->required();
  pre->add_option("--labels", pre_labels, "label space file")->required();
  pre->add_option("--out", pre_out, "run directory");
  pre->add_option("--data-fraction", pre_fraction, "fraction of train groups to keep");
  pre->add_option("--epochs", pre_epochs, "override epoch count");
  pre->add_option("--batch-size", pre_batch, "override batch size");

  auto* fine = app.add_subcommand("finetune", "multi-label fine-tuning");
  std::string fine_manifest, fine_labels, fine_out, fine_init;
  double fine_fraction = 1.0;
  int fine_epochs = 0, fine_batch = 0;
  fine->add_option("--manifest", fine_manifest, "training manifest")->required();
  fine->add_option("--labels", fine_labels, "label space file")->required();
  fine->add_option("--out", fine_out, "run directory");
  fine->add_option("--init", fine_init, "checkpoint to start from (omit for random init)");
  fine->add_option("--data-fraction", fine_fraction, "fraction of train groups to keep");
  fine->add_option("--epochs", fine_epochs, "override epoch count");
  fine->add_option("--batch-size", fine_batch, "override batch size");

  auto* ev = app.add_subcommand("eval", "score a test split and report metrics");
  std::string ev_manifest, ev_labels, ev_ckpt, ev_out, ev_thr, ev_emb;
  ev->add_option("--manifest", ev_manifest, "manifest with a test split")->required();
  ev->add_option("--labels", ev_labels, "label space file")->required();
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--out", ev_out, "report directory");
  ev->add_option("--threshold-on", ev_thr, "sweep the decision threshold on test or val")
      ->check(CLI::IsMember({"test", "val"}));
  ev->add_option("--export-embeddings", ev_emb, "write a TSV of penultimate embeddings");

  auto* par = app.add_subcommand("params", "print parameter counts");
  std::string par_ckpt;
  bool par_compare = false;
  par->add_option("--ckpt", par_ckpt, "count the model stored in a checkpoint");
  par->add_flag("--compare", par_compare, "also print shared vs unshared conv totals");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every operator");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (synth->parsed()) return cmd_synth_data(g, synth_out);
    if (nsynth->parsed()) return cmd_ingest_nsynth(g, nsynth_root, nsynth_out);
    if (irmas->parsed()) return cmd_ingest_irmas(g, irmas_root, irmas_mode, irmas_out);
    if (pre->parsed())
      return cmd_pretrain(g, pre_manifest, pre_labels, pre_out, pre_fraction, pre_epochs,
                          pre_batch);
    if (fine->parsed())
      return cmd_finetune(g, fine_manifest, fine_labels, fine_out, fine_init, fine_fraction,
                          fine_epochs, fine_batch);
    if (ev->parsed())
      return cmd_eval(g, ev_manifest, ev_labels, ev_ckpt, ev_out, ev_thr, ev_emb);
    if (par->parsed()) return cmd_params(g, par_ckpt, par_compare);
    if (gc->parsed()) return cmd_gradcheck(g);
  } catch (const timbre::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const timbre::TrainError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return 4;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
