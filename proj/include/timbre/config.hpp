// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "timbre/augment.hpp"
#include "timbre/common.hpp"
#include "timbre/model.hpp"
#include "timbre/train.hpp"

namespace timbre {

using nlohmann::json;

struct CorpusConfig {
  int n_families = 8;
  int per_family = 8;
  int notes_per_instrument = 10;
  double duration_s = 1.0;
  int poly_min = 1;
  int poly_max = 3;
  int n_mixtures = 200;
  double mix_lufs = -12.0;
};

struct PhaseConfig {
  int batch_size;
  int epochs;
  double max_lr;
  int warmup_epochs;
  double weight_decay;
  double label_smoothing;
  double mixup_prob;
  double mixup_alpha;
  double concat_prob;
};

inline PhaseConfig default_pretrain_phase() {
  return {128, 30, 1e-3, 3, 5e-4, 0.05, 0.5, 0.3, 0.5};
}

// max_lr applies when starting from a checkpoint; training from scratch uses
// scratch_lr instead.
struct FinetunePhaseConfig : PhaseConfig {
  double scratch_lr;
};

inline FinetunePhaseConfig default_finetune_phase() {
  FinetunePhaseConfig p;
  static_cast<PhaseConfig&>(p) = {64, 40, 2.5e-4, 5, 5e-4, 0.0, 0.0, 0.3, 0.0};
  p.scratch_lr = 3.5e-3;
  return p;
}

struct EvalConfig {
  double window_s = 1.0;
  double overlap = 0.5;
  int batch_clips = 64;
  std::string threshold_on = "test";  // "test" or "val"
};

struct PathsConfig {
  std::string out_dir = "runs";
  std::string data_dir = "data";
};

struct CliConfig {
  uint64_t seed = 0;
  PathsConfig paths;
  CorpusConfig corpus;
  EffectConfig augment;
  ModelConfig model;
  PhaseConfig pretrain = default_pretrain_phase();
  FinetunePhaseConfig finetune = default_finetune_phase();
  EvalConfig eval;
};

namespace detail {

inline void expect_keys(const json& j, const std::string& where,
                        std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("config: unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for \"" + std::string(key) + "\" in " + where);
  }
}

inline void get_range(const json& j, const char* key, Range& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2)
    throw ConfigError("config: \"" + std::string(key) + "\" in " + where + " must be [lo, hi]");
  out.lo = v.at(0).get<double>();
  out.hi = v.at(1).get<double>();
}

inline void parse_phase(const json& j, const std::string& where, PhaseConfig& p) {
  expect_keys(j, where,
              {"batch_size", "epochs", "max_lr", "warmup_epochs", "weight_decay",
               "label_smoothing", "mixup_prob", "mixup_alpha", "concat_prob"});
  get_if(j, "batch_size", p.batch_size, where);
  get_if(j, "epochs", p.epochs, where);
  get_if(j, "max_lr", p.max_lr, where);
  get_if(j, "warmup_epochs", p.warmup_epochs, where);
  get_if(j, "weight_decay", p.weight_decay, where);
  get_if(j, "label_smoothing", p.label_smoothing, where);
  get_if(j, "mixup_prob", p.mixup_prob, where);
  get_if(j, "mixup_alpha", p.mixup_alpha, where);
  get_if(j, "concat_prob", p.concat_prob, where);
}

}  // namespace detail

inline CliConfig parse_cli_config(const json& j) {
  using detail::expect_keys;
  using detail::get_if;
  using detail::get_range;
  CliConfig c;
  expect_keys(j, "top level",
              {"seed", "paths", "corpus", "augment", "model", "pretrain", "finetune", "eval"});
  get_if(j, "seed", c.seed, "top level");

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    expect_keys(p, "paths", {"out_dir", "data_dir"});
    get_if(p, "out_dir", c.paths.out_dir, "paths");
    get_if(p, "data_dir", c.paths.data_dir, "paths");
  }
  if (j.contains("corpus")) {
    const json& p = j.at("corpus");
    expect_keys(p, "corpus",
                {"n_families", "per_family", "notes_per_instrument", "duration_s", "poly_min",
                 "poly_max", "n_mixtures", "mix_lufs"});
    get_if(p, "n_families", c.corpus.n_families, "corpus");
    get_if(p, "per_family", c.corpus.per_family, "corpus");
    get_if(p, "notes_per_instrument", c.corpus.notes_per_instrument, "corpus");
    get_if(p, "duration_s", c.corpus.duration_s, "corpus");
    get_if(p, "poly_min", c.corpus.poly_min, "corpus");
    get_if(p, "poly_max", c.corpus.poly_max, "corpus");
    get_if(p, "n_mixtures", c.corpus.n_mixtures, "corpus");
    get_if(p, "mix_lufs", c.corpus.mix_lufs, "corpus");
  }
  if (j.contains("augment")) {
    const json& p = j.at("augment");
    expect_keys(p, "augment",
                {"chain_probability", "toggle_probability", "noise_snr_db", "delay_ms",
                 "delay_attenuation", "reverb_decay", "gain_db", "pitch_semitones", "highpass_hz",
                 "lowpass_hz"});
    get_if(p, "chain_probability", c.augment.chain_probability, "augment");
    get_if(p, "toggle_probability", c.augment.toggle_probability, "augment");
    get_range(p, "noise_snr_db", c.augment.noise_snr_db, "augment");
    get_range(p, "delay_ms", c.augment.delay_ms, "augment");
    get_range(p, "delay_attenuation", c.augment.delay_attenuation, "augment");
    get_range(p, "reverb_decay", c.augment.reverb_decay, "augment");
    get_range(p, "gain_db", c.augment.gain_db, "augment");
    get_range(p, "pitch_semitones", c.augment.pitch_semitones, "augment");
    get_range(p, "highpass_hz", c.augment.highpass_hz, "augment");
    get_range(p, "lowpass_hz", c.augment.lowpass_hz, "augment");
  }
  if (j.contains("model")) {
    const json& p = j.at("model");
    expect_keys(p, "model", {"sample_rate", "frontend", "encoder", "lde", "head", "n_out"});
    if (p.contains("frontend"))
      expect_keys(p.at("frontend"), "model.frontend",
                  {"n_filters", "kernel_len", "stride", "f_min", "f_max", "min_band_hz",
                   "frame_ms", "hop_ms"});
    if (p.contains("encoder"))
      expect_keys(p.at("encoder"), "model.encoder", {"depths", "widths", "shared_blocks"});
    if (p.contains("lde")) expect_keys(p.at("lde"), "model.lde", {"n_components"});
    try {
      c.model = ModelConfig::from_json(p);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad model section: ") + e.what());
    }
  }
  if (j.contains("pretrain")) detail::parse_phase(j.at("pretrain"), "pretrain", c.pretrain);
  if (j.contains("finetune")) {
    const json& p = j.at("finetune");
    expect_keys(p, "finetune",
                {"batch_size", "epochs", "max_lr", "scratch_lr", "warmup_epochs", "weight_decay",
                 "label_smoothing", "mixup_prob", "mixup_alpha", "concat_prob"});
    json stripped = p;
    stripped.erase("scratch_lr");
    detail::parse_phase(stripped, "finetune", c.finetune);
    get_if(p, "scratch_lr", c.finetune.scratch_lr, "finetune");
  }
  if (j.contains("eval")) {
    const json& p = j.at("eval");
    expect_keys(p, "eval", {"window_s", "overlap", "batch_clips", "threshold_on"});
    get_if(p, "window_s", c.eval.window_s, "eval");
    get_if(p, "overlap", c.eval.overlap, "eval");
    get_if(p, "batch_clips", c.eval.batch_clips, "eval");
    get_if(p, "threshold_on", c.eval.threshold_on, "eval");
    if (c.eval.threshold_on != "test" && c.eval.threshold_on != "val")
      throw ConfigError("config: eval.threshold_on must be \"test\" or \"val\"");
  }
  return c;
}

inline CliConfig load_cli_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return parse_cli_config(j);
}

// Fill a RunConfig from a phase section.
inline RunConfig make_run_config(const CliConfig& c, Phase phase, bool from_checkpoint = true) {
  RunConfig r;
  r.phase = phase;
  const PhaseConfig& p = phase == Phase::kPretrain ? c.pretrain
                                                   : static_cast<const PhaseConfig&>(c.finetune);
  r.batch_size = p.batch_size;
  r.epochs = p.epochs;
  r.max_lr = p.max_lr;
  if (phase == Phase::kFinetune && !from_checkpoint) r.max_lr = c.finetune.scratch_lr;
  r.warmup_epochs = p.warmup_epochs;
  r.weight_decay = p.weight_decay;
  r.label_smoothing = p.label_smoothing;
  r.mixup_prob = p.mixup_prob;
  r.mixup_alpha = p.mixup_alpha;
  r.concat_prob = p.concat_prob;
  r.effects = c.augment;
  if (phase == Phase::kFinetune) r.effects.chain_probability = 0.0;  // no augmentation
  r.seed = c.seed;
  r.model = c.model;
  return r;
}

}  // namespace timbre
