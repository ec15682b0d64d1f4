// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "timbre/audio.hpp"
#include "timbre/manifest.hpp"
#include "timbre/metrics.hpp"
#include "timbre/model.hpp"

namespace timbre {

struct InferOptions {
  double window_s = 1.0;
  double overlap = 0.5;
  int64_t batch_clips = 64;
};

namespace detail {

inline std::vector<Waveform> entry_clips(const ManifestEntry& e, int sample_rate,
                                         const InferOptions& opt) {
  Waveform w = load_wav(e.path);
  if (w.sample_rate != sample_rate) w = resample(w, sample_rate);
  return clip_split(w, opt.window_s, opt.overlap);
}

}  // namespace detail

// Overlapping 1 s windows per clip, mean logit aggregation, sigmoid scores.
inline ScoreMatrix score_manifest(const ModelConfig& cfg, ParamStore& ps,
                                  const std::vector<ManifestEntry>& entries,
                                  const LabelSpace& labels, const InferOptions& opt = {}) {
  const int M = int(labels.coarse_names.size());
  if (cfg.n_out != M) throw ConfigError("score_manifest: head size does not match label space");
  ScoreMatrix sm;
  sm.label_names = labels.coarse_names;

  std::vector<Waveform> pending;                           // clip queue across entries
  std::vector<size_t> pending_entry;                       // owning row per queued clip
  std::vector<std::vector<std::vector<double>>> clip_rows(entries.size());

  auto flush = [&]() {
    if (pending.empty()) return;
    const int64_t B = int64_t(pending.size());
    const int64_t L = cfg.sample_rate;
    Tensor<float> waves({B, L});
    for (int64_t i = 0; i < B; ++i)
      for (int64_t s = 0; s < L; ++s)
        waves.at(i, s) =
            s < int64_t(pending[size_t(i)].samples.size()) ? pending[size_t(i)].samples[size_t(s)] : 0.0f;
    Tensor<float> logits = forward_logits(cfg, ps, waves);
    for (int64_t i = 0; i < B; ++i) {
      std::vector<double> row(static_cast<size_t>(M));
      for (int k = 0; k < M; ++k) row[size_t(k)] = double(logits.at(i, k));
      clip_rows[pending_entry[size_t(i)]].push_back(std::move(row));
    }
    pending.clear();
    pending_entry.clear();
  };

  for (size_t ei = 0; ei < entries.size(); ++ei) {
    auto clips = detail::entry_clips(entries[ei], cfg.sample_rate, opt);
    for (auto& c : clips) {
      pending.push_back(std::move(c));
      pending_entry.push_back(ei);
      if (int64_t(pending.size()) >= opt.batch_clips) flush();
    }
  }
  flush();

  for (size_t ei = 0; ei < entries.size(); ++ei) {
    const auto agg = aggregate_logits(clip_rows[ei]);
    sm.ids.push_back(entries[ei].id);
    std::vector<double> score_row(static_cast<size_t>(M));
    std::vector<int> truth_row(static_cast<size_t>(M), 0);
    for (int k = 0; k < M; ++k) score_row[size_t(k)] = sigmoid(agg[size_t(k)]);
    for (int c : entries[ei].coarse_labels)
      if (c >= 0 && c < M) truth_row[size_t(c)] = 1;
    sm.scores.push_back(std::move(score_row));
    sm.truth.push_back(std::move(truth_row));
  }
  sm.validate();
  return sm;
}

// One row per entry: id, label names, unit-norm embedding (clip mean,
// re-normalized).
inline void export_embeddings(const ModelConfig& cfg, ParamStore& ps,
                              const std::vector<ManifestEntry>& entries,
                              const LabelSpace& labels, const std::string& path,
                              const InferOptions& opt = {}) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path);
  const int64_t E = cfg.embedding_dim();
  out << "id\tlabels";
  for (int64_t k = 0; k < E; ++k) out << "\te" << k;
  out << "\n";

  for (const auto& e : entries) {
    auto clips = detail::entry_clips(e, cfg.sample_rate, opt);
    const int64_t B = int64_t(clips.size());
    const int64_t L = cfg.sample_rate;
    Tensor<float> waves({B, L});
    for (int64_t i = 0; i < B; ++i)
      for (int64_t s = 0; s < L; ++s)
        waves.at(i, s) =
            s < int64_t(clips[size_t(i)].samples.size()) ? clips[size_t(i)].samples[size_t(s)] : 0.0f;
    Tensor<float> emb;
    forward_logits(cfg, ps, waves, &emb);
    std::vector<double> mean(size_t(E), 0.0);
    for (int64_t i = 0; i < B; ++i)
      for (int64_t k = 0; k < E; ++k) mean[size_t(k)] += double(emb.at(i, k)) / double(B);
    double nrm = 0;
    for (double v : mean) nrm += v * v;
    nrm = std::sqrt(nrm);
    if (nrm > 0)
      for (double& v : mean) v /= nrm;

    out << e.id << "\t";
    bool first = true;
    for (int c : e.coarse_labels) {
      if (!first) out << ";";
      first = false;
      if (c >= 0 && c < int(labels.coarse_names.size()))
        out << labels.coarse_names[size_t(c)];
      else
        out << c;
    }
    if (first && e.fine_label >= 0 && e.fine_label < int(labels.fine_names.size()))
      out << labels.fine_names[size_t(e.fine_label)];
    char buf[32];
    for (double v : mean) {
      std::snprintf(buf, sizeof(buf), "%.6f", v);
      out << "\t" << buf;
    }
    out << "\n";
  }
}

}  // namespace timbre
