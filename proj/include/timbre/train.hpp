// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "timbre/audio.hpp"
#include "timbre/augment.hpp"
#include "timbre/common.hpp"
#include "timbre/graph.hpp"
#include "timbre/loudness.hpp"
#include "timbre/manifest.hpp"
#include "timbre/model.hpp"
#include "timbre/optim.hpp"

namespace timbre {

enum class Phase { kPretrain, kFinetune };

struct RunConfig {
  Phase phase = Phase::kPretrain;
  int batch_size = 32;
  int epochs = 10;
  double max_lr = 1e-3;
  double weight_decay = 5e-4;
  int warmup_epochs = 3;
  double label_smoothing = 0.05;
  double mixup_prob = 0.5;
  double mixup_alpha = 0.3;
  double concat_prob = 0.5;
  EffectConfig effects;  // chain_probability is the per-sample effect ratio
  double target_lufs = -12.0;
  uint64_t seed = 0;
  ModelConfig model;
  std::string out_dir;
  bool quiet = false;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(max_lr > 0)) throw ConfigError("train: max_lr must be positive");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw ConfigError("train: need 0 <= warmup_epochs < epochs");
    auto prob = [](double p, const char* what) {
      if (!(p >= 0 && p <= 1)) throw ConfigError(std::string("train: bad probability ") + what);
    };
    prob(mixup_prob, "mixup_prob");
    prob(concat_prob, "concat_prob");
    prob(label_smoothing, "label_smoothing");
    if (!(mixup_alpha > 0)) throw ConfigError("train: mixup_alpha must be positive");
  }
};

namespace detail {

// Whole-file cache for desk-scale corpora; falls back to load-on-demand once
// the cap is hit.
class WaveCache {
 public:
  explicit WaveCache(size_t max_entries = 20000) : max_entries_(max_entries) {}
  const Waveform& get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    if (cache_.size() >= max_entries_) {
      scratch_ = load_wav(path);
      return scratch_;
    }
    return cache_.emplace(path, load_wav(path)).first->second;
  }

 private:
  size_t max_entries_;
  std::map<std::string, Waveform> cache_;
  Waveform scratch_;
};

inline Waveform normalize_or_passthrough(const Waveform& w, double target_lufs) {
  try {
    return normalize_lufs(w, target_lufs).audio;
  } catch (const std::runtime_error&) {
    return w;  // silent or too-short input: leave unchanged
  }
}

struct RunLogger {
  std::ofstream file;
  bool quiet = false;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  RunLogger(const std::string& out_dir, bool q) : quiet(q) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    file.open((fs::path(out_dir) / "run.log").string(), std::ios::trunc);
    if (!file) throw IoError("cannot open run log in " + out_dir);
  }

  void log(int64_t step, int epoch, double lr, double loss) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    nlohmann::json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["loss"] = loss;
    j["wall_time"] = wall;
    file << j.dump() << "\n";
  }

  void epoch_note(int epoch, double mean_loss) {
    if (!quiet)
      std::fprintf(stderr, "epoch %d  mean_loss %.5f\n", epoch, mean_loss);
  }
};

// Deterministic batch order: one permutation per (seed, epoch).
inline std::vector<int64_t> epoch_order(uint64_t seed, int epoch, int64_t n) {
  Rng rng(derive_seed(seed, {0x65706f6368ULL, uint64_t(epoch)}));
  return rng.permutation(n);
}

inline int64_t steps_per_epoch(int64_t n_samples, int batch_size) {
  if (n_samples < 2) throw TrainError("training needs at least 2 samples");
  return std::max<int64_t>(1, n_samples / batch_size);
}

// Run one optimization step: forward, loss, backward, Adam.
template <typename LossFn>
double optimize_step(const ModelConfig& mcfg, ParamStore& ps, AdamState& adam,
                     const Tensor<float>& waves, LossFn&& loss_fn, double lr,
                     double weight_decay) {
  Graph<float> g;
  auto ids = model_forward(g, mcfg, ps, waves, /*training=*/true);
  auto loss_id = loss_fn(g, ids.logits);
  g.backward(loss_id);
  std::map<std::string, Tensor<float>> grads;
  for (const auto& [name, id] : ids.leaves)
    if (g.has_grad(id)) grads.emplace(name, g.grad(id));
  const double loss = double(g.val(loss_id)[0]);
  if (!std::isfinite(loss)) throw TrainError("non-finite training loss");
  adam_step(ps, grads, adam, lr, weight_decay);
  return loss;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pre-training: single-label notes, CE with label smoothing, the full
// augmentation stack (same-class concatenation, effect chains, loudness
// matching, mixup).
inline Checkpoint pretrain(const RunConfig& cfg, const std::vector<ManifestEntry>& entries,
                           const LabelSpace& labels) {
  cfg.validate();
  if (entries.empty()) throw TrainError("pretrain: empty manifest");
  const int K = int(labels.fine_names.size());
  ModelConfig mcfg = cfg.model;
  mcfg.head = HeadKind::kSoftmaxCe;
  mcfg.n_out = K;
  mcfg.validate();

  std::vector<const ManifestEntry*> train;
  for (const auto& e : entries)
    if (e.split == Split::kTrain) train.push_back(&e);
  if (train.size() < 2) throw TrainError("pretrain: need at least 2 training entries");
  for (const auto* e : train)
    if (e->fine_label < 0 || e->fine_label >= K)
      throw TrainError("pretrain: entry " + e->id + " lacks a valid fine label");

  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < train.size(); ++i) by_class[train[i]->fine_label].push_back(i);

  ParamStore ps = init_params(mcfg, cfg.seed);
  AdamState adam;
  const int64_t n = int64_t(train.size());
  const int64_t spe = detail::steps_per_epoch(n, cfg.batch_size);
  Schedule sched{cfg.max_lr, int64_t(cfg.warmup_epochs) * spe, int64_t(cfg.epochs) * spe};
  sched.validate();

  detail::RunLogger logger(cfg.out_dir, cfg.quiet);
  detail::WaveCache cache;
  const int64_t L = mcfg.sample_rate;  // 1 s crops
  int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = detail::epoch_order(cfg.seed, epoch, n);
    double loss_sum = 0;
    for (int64_t b = 0; b < spe; ++b) {
      const int64_t b0 = b * cfg.batch_size;
      const int64_t bs = std::min<int64_t>(cfg.batch_size, n - b0);
      Tensor<float> waves({bs, L});
      Tensor<float> targets({bs, int64_t(K)});

      for (int64_t i = 0; i < bs; ++i) {
        const ManifestEntry& e = *train[size_t(order[size_t(b0 + i)])];
        Rng rng(derive_seed(cfg.seed, {0x73616d70ULL, uint64_t(epoch), uint64_t(b), uint64_t(i)}));
        const Waveform& full = cache.get(e.path);
        Waveform crop = first_second(full);
        if (rng.bernoulli(cfg.concat_prob)) {
          const auto& pool = by_class.at(e.fine_label);
          const auto& partner = *train[pool[size_t(rng.uniform_int(int64_t(pool.size())))]];
          crop = concat_same_class({full, cache.get(partner.path)}, 1.0);
        }
        crop = effect_chain(crop, cfg.effects, rng);
        crop = detail::normalize_or_passthrough(crop, cfg.target_lufs);
        for (int64_t s = 0; s < L; ++s)
          waves.at(i, s) = s < int64_t(crop.samples.size()) ? crop.samples[size_t(s)] : 0.0f;
        targets.at(i, e.fine_label) = 1.0f;
      }

      // within-batch mixup on loudness-matched crops
      {
        Rng rng(derive_seed(cfg.seed, {0x6d697875ULL, uint64_t(epoch), uint64_t(b)}));
        auto partner = rng.permutation(bs);
        Tensor<float> mixed_w = waves, mixed_t = targets;
        for (int64_t i = 0; i < bs; ++i) {
          if (!rng.bernoulli(cfg.mixup_prob)) continue;
          const int64_t j = partner[size_t(i)];
          const float lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha));
          for (int64_t s = 0; s < L; ++s)
            mixed_w.at(i, s) = lam * waves.at(i, s) + (1.0f - lam) * waves.at(j, s);
          for (int64_t k = 0; k < K; ++k)
            mixed_t.at(i, k) = lam * targets.at(i, k) + (1.0f - lam) * targets.at(j, k);
        }
        waves = std::move(mixed_w);
        targets = std::move(mixed_t);
      }

      const double lr = lr_at(step, sched);
      const double loss = detail::optimize_step(
          mcfg, ps, adam, waves,
          [&](Graph<float>& g, typename Graph<float>::Id logits) {
            return g.softmax_ce(logits, targets, float(cfg.label_smoothing));
          },
          lr, cfg.weight_decay);
      ++step;
      loss_sum += loss;
      logger.log(step, epoch, lr, loss);
    }
    logger.epoch_note(epoch, loss_sum / double(spe));
  }

  Checkpoint ckpt;
  ckpt.config = mcfg;
  ckpt.step = step;
  ckpt.seed = cfg.seed;
  ckpt.params = std::move(ps);
  namespace fs = std::filesystem;
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.tfv1").string(), ckpt);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Fine-tuning: multi-label targets, sigmoid + BCE, no augmentation. Clips are
// cut into up to three non-overlapping 1 s crops; every crop is normalized to
// the dataset loudness target.
inline Checkpoint finetune(const RunConfig& cfg, const std::vector<ManifestEntry>& entries,
                           const LabelSpace& labels, const Checkpoint* init) {
  cfg.validate();
  if (entries.empty()) throw TrainError("finetune: empty manifest");
  const int M = int(labels.coarse_names.size());
  ModelConfig mcfg = cfg.model;
  mcfg.head = HeadKind::kSigmoidBce;
  mcfg.n_out = M;
  mcfg.validate();

  ParamStore ps;
  if (init != nullptr) {
    check_body_compatible(*init, mcfg);
    Checkpoint swapped = swap_head(*init, HeadKind::kSigmoidBce, M, cfg.seed);
    ps = std::move(swapped.params);
  } else {
    ps = init_params(mcfg, cfg.seed);
  }

  struct Crop {
    const ManifestEntry* entry;
    int index;
  };
  std::vector<Crop> crops;
  for (const auto& e : entries) {
    if (e.split != Split::kTrain) continue;
    for (int c : e.coarse_labels)
      if (c < 0 || c >= M) throw TrainError("finetune: entry " + e.id + " has bad coarse label");
    const int n_crops = std::max(1, std::min(3, int(e.duration_s)));
    for (int k = 0; k < n_crops; ++k) crops.push_back({&e, k});
  }
  if (crops.size() < 2) throw TrainError("finetune: need at least 2 training crops");

  AdamState adam;
  const int64_t n = int64_t(crops.size());
  const int64_t spe = detail::steps_per_epoch(n, cfg.batch_size);
  Schedule sched{cfg.max_lr, int64_t(cfg.warmup_epochs) * spe, int64_t(cfg.epochs) * spe};
  sched.validate();

  detail::RunLogger logger(cfg.out_dir, cfg.quiet);
  detail::WaveCache cache;
  const int64_t L = mcfg.sample_rate;
  int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = detail::epoch_order(cfg.seed, epoch, n);
    double loss_sum = 0;
    for (int64_t b = 0; b < spe; ++b) {
      const int64_t b0 = b * cfg.batch_size;
      const int64_t bs = std::min<int64_t>(cfg.batch_size, n - b0);
      Tensor<float> waves({bs, L});
      Tensor<float> targets({bs, int64_t(M)});

      for (int64_t i = 0; i < bs; ++i) {
        const Crop& cr = crops[size_t(order[size_t(b0 + i)])];
        const Waveform& full = cache.get(cr.entry->path);
        Waveform crop;
        crop.sample_rate = full.sample_rate;
        const int64_t begin = int64_t(cr.index) * full.sample_rate;
        const int64_t end = std::min<int64_t>(begin + full.sample_rate, full.size());
        if (begin < full.size())
          crop.samples.assign(full.samples.begin() + size_t(begin),
                              full.samples.begin() + size_t(end));
        crop.samples.resize(size_t(full.sample_rate), 0.0f);
        if (full.sample_rate != mcfg.sample_rate) crop = resample(crop, mcfg.sample_rate);
        crop = detail::normalize_or_passthrough(crop, cfg.target_lufs);
        for (int64_t s = 0; s < L; ++s)
          waves.at(i, s) = s < int64_t(crop.samples.size()) ? crop.samples[size_t(s)] : 0.0f;
        for (int c : cr.entry->coarse_labels) targets.at(i, c) = 1.0f;
      }

      const double lr = lr_at(step, sched);
      const double loss = detail::optimize_step(
          mcfg, ps, adam, waves,
          [&](Graph<float>& g, typename Graph<float>::Id logits) {
            return g.sigmoid_bce(logits, targets);
          },
          lr, cfg.weight_decay);
      ++step;
      loss_sum += loss;
      logger.log(step, epoch, lr, loss);
    }
    logger.epoch_note(epoch, loss_sum / double(spe));
  }

  Checkpoint ckpt;
  ckpt.config = mcfg;
  ckpt.step = step;
  ckpt.seed = cfg.seed;
  ckpt.params = std::move(ps);
  namespace fs = std::filesystem;
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.tfv1").string(), ckpt);
  return ckpt;
}

}  // namespace timbre
