// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "timbre/audio.hpp"
#include "timbre/common.hpp"

namespace timbre {

// ---------------------------------------------------------------------------
// Clip handling

// Fixed windows with overlap; a trailing partial window is discarded. Inputs
// shorter than one window yield a single zero-padded clip.
inline std::vector<Waveform> clip_split(const Waveform& w, double win_s = 1.0,
                                        double overlap = 0.5) {
  if (!(win_s > 0)) throw ConfigError("clip_split: win_s must be positive");
  if (!(overlap >= 0 && overlap < 1)) throw ConfigError("clip_split: overlap must be in [0,1)");
  const int64_t win = std::llround(win_s * w.sample_rate);
  const int64_t hop = std::max<int64_t>(1, std::llround(win_s * (1.0 - overlap) * w.sample_rate));
  std::vector<Waveform> clips;
  const int64_t n = int64_t(w.samples.size());
  if (n < win) {
    Waveform c;
    c.sample_rate = w.sample_rate;
    c.samples = w.samples;
    c.samples.resize(size_t(win), 0.0f);
    clips.push_back(std::move(c));
    return clips;
  }
  const int64_t count = (n - win) / hop + 1;
  for (int64_t i = 0; i < count; ++i) {
    Waveform c;
    c.sample_rate = w.sample_rate;
    c.samples.assign(w.samples.begin() + size_t(i * hop),
                     w.samples.begin() + size_t(i * hop + win));
    clips.push_back(std::move(c));
  }
  return clips;
}

inline std::vector<double> aggregate_logits(const std::vector<std::vector<double>>& clip_logits) {
  if (clip_logits.empty()) throw ConfigError("aggregate_logits: no clips");
  const size_t m = clip_logits[0].size();
  std::vector<double> out(m, 0.0);
  for (const auto& row : clip_logits) {
    if (row.size() != m) throw ConfigError("aggregate_logits: ragged clip logits");
    for (size_t j = 0; j < m; ++j) out[j] += row[j];
  }
  for (double& v : out) v /= double(clip_logits.size());
  return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Score matrix

struct ScoreMatrix {
  std::vector<std::string> ids;          // optional, size N when present
  std::vector<std::string> label_names;  // optional, size M when present
  std::vector<std::vector<double>> scores;  // N x M
  std::vector<std::vector<int>> truth;      // N x M, 0/1

  int64_t rows() const { return int64_t(scores.size()); }
  int64_t cols() const { return scores.empty() ? 0 : int64_t(scores[0].size()); }

  void validate() const {
    if (scores.size() != truth.size()) throw ConfigError("score matrix: row count mismatch");
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != scores[0].size() || truth[i].size() != scores[0].size())
        throw ConfigError("score matrix: ragged rows");
      for (int v : truth[i])
        if (v != 0 && v != 1) throw ConfigError("score matrix: truth must be 0/1");
    }
  }
};

inline void save_scores(const std::string& path, const ScoreMatrix& sm) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write score file: " + path);
  for (size_t i = 0; i < sm.scores.size(); ++i) {
    nlohmann::json j;
    j["id"] = i < sm.ids.size() ? sm.ids[i] : std::to_string(i);
    j["scores"] = sm.scores[i];
    j["truth"] = sm.truth[i];
    f << j.dump() << "\n";
  }
}

inline ScoreMatrix load_scores(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open score file: " + path);
  ScoreMatrix sm;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      sm.ids.push_back(j.value("id", std::to_string(lineno)));
      sm.scores.push_back(j.at("scores").get<std::vector<double>>());
      sm.truth.push_back(j.at("truth").get<std::vector<int>>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  sm.validate();
  return sm;
}

// ---------------------------------------------------------------------------
// F1 family

struct ClassMetrics {
  int64_t tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double micro_precision = 0, micro_recall = 0, micro_f1 = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double threshold = 0.5;
  double lrap = -1.0;      // < 0 when not computed
  double accuracy = -1.0;  // single-predominant argmax accuracy, when computed
  std::vector<std::vector<int64_t>> confusion;  // empty when not computed
  std::vector<std::string> label_names;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["threshold"] = threshold;
    j["micro"] = {{"precision", micro_precision}, {"recall", micro_recall}, {"f1", micro_f1}};
    j["macro"] = {{"precision", macro_precision}, {"recall", macro_recall}, {"f1", macro_f1}};
    if (lrap >= 0) j["lrap"] = lrap;
    if (accuracy >= 0) j["accuracy"] = accuracy;
    nlohmann::json pc = nlohmann::json::array();
    for (size_t c = 0; c < per_class.size(); ++c) {
      nlohmann::json e;
      e["class"] = c < label_names.size() ? label_names[c] : std::to_string(c);
      e["tp"] = per_class[c].tp;
      e["fp"] = per_class[c].fp;
      e["fn"] = per_class[c].fn;
      e["precision"] = per_class[c].precision;
      e["recall"] = per_class[c].recall;
      e["f1"] = per_class[c].f1;
      pc.push_back(std::move(e));
    }
    j["per_class"] = std::move(pc);
    if (!confusion.empty()) j["confusion"] = confusion;
    return j;
  }

  std::string per_class_csv() const {
    std::ostringstream os;
    os << "class,tp,fp,fn,precision,recall,f1\n";
    for (size_t c = 0; c < per_class.size(); ++c) {
      os << (c < label_names.size() ? label_names[c] : std::to_string(c)) << ","
         << per_class[c].tp << "," << per_class[c].fp << "," << per_class[c].fn << ","
         << per_class[c].precision << "," << per_class[c].recall << "," << per_class[c].f1
         << "\n";
    }
    return os.str();
  }
};

// Binarize at threshold (score >= t predicts positive), then per-class and
// averaged precision/recall/F1. Zero denominators yield zero.
inline MetricsReport f1_scores(const ScoreMatrix& sm, double threshold) {
  sm.validate();
  const int64_t N = sm.rows(), M = sm.cols();
  MetricsReport rep;
  rep.threshold = threshold;
  rep.label_names = sm.label_names;
  rep.per_class.assign(size_t(M), ClassMetrics{});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t c = 0; c < M; ++c) {
      const bool pred = sm.scores[size_t(i)][size_t(c)] >= threshold;
      const bool pos = sm.truth[size_t(i)][size_t(c)] != 0;
      if (pred && pos)
        rep.per_class[size_t(c)].tp++;
      else if (pred && !pos)
        rep.per_class[size_t(c)].fp++;
      else if (!pred && pos)
        rep.per_class[size_t(c)].fn++;
    }

  auto ratio = [](int64_t num, int64_t den) { return den > 0 ? double(num) / double(den) : 0.0; };
  auto f1_of = [](double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; };

  int64_t tp = 0, fp = 0, fn = 0;
  double psum = 0, rsum = 0;
  for (auto& c : rep.per_class) {
    c.precision = ratio(c.tp, c.tp + c.fp);
    c.recall = ratio(c.tp, c.tp + c.fn);
    c.f1 = f1_of(c.precision, c.recall);
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    psum += c.precision;
    rsum += c.recall;
  }
  rep.micro_precision = ratio(tp, tp + fp);
  rep.micro_recall = ratio(tp, tp + fn);
  rep.micro_f1 = f1_of(rep.micro_precision, rep.micro_recall);
  rep.macro_precision = M > 0 ? psum / double(M) : 0.0;
  rep.macro_recall = M > 0 ? rsum / double(M) : 0.0;
  rep.macro_f1 = f1_of(rep.macro_precision, rep.macro_recall);
  return rep;
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(double(i) / 100.0);
  return g;
}

struct SweepResult {
  double micro_threshold = 0;
  MetricsReport micro_best;
  double macro_threshold = 0;
  MetricsReport macro_best;
};

// Evaluate the grid in ascending order; a strictly better F1 claims the spot,
// so ties resolve to the lowest threshold.
inline SweepResult sweep_threshold(const ScoreMatrix& sm, std::vector<double> grid = {}) {
  if (grid.empty()) grid = default_threshold_grid();
  for (double t : grid)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("sweep_threshold: grid values must be in [0,1]");
  std::sort(grid.begin(), grid.end());
  SweepResult out;
  double best_micro = -1, best_macro = -1;
  for (double t : grid) {
    MetricsReport rep = f1_scores(sm, t);
    if (rep.micro_f1 > best_micro) {
      best_micro = rep.micro_f1;
      out.micro_threshold = t;
      out.micro_best = rep;
    }
    if (rep.macro_f1 > best_macro) {
      best_macro = rep.macro_f1;
      out.macro_threshold = t;
      out.macro_best = std::move(rep);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label ranking average precision

// For each sample i and true label j: rank = |{k : score_ik >= score_ij}| and
// L = |{k true : score_ik >= score_ij}|; the sample contributes the mean of
// L/rank over its true labels; samples average uniformly.
inline double lrap(const ScoreMatrix& sm) {
  sm.validate();
  const int64_t N = sm.rows(), M = sm.cols();
  if (N == 0) throw ConfigError("lrap: empty score matrix");
  double total = 0;
  for (int64_t i = 0; i < N; ++i) {
    const auto& s = sm.scores[size_t(i)];
    const auto& y = sm.truth[size_t(i)];
    int64_t n_pos = 0;
    for (int v : y) n_pos += v;
    if (n_pos == 0)
      throw ConfigError("lrap: row " + std::to_string(i) + " has no positive labels");
    double acc = 0;
    for (int64_t j = 0; j < M; ++j) {
      if (!y[size_t(j)]) continue;
      int64_t rank = 0, L = 0;
      for (int64_t k = 0; k < M; ++k) {
        if (s[size_t(k)] >= s[size_t(j)]) {
          ++rank;
          if (y[size_t(k)]) ++L;
        }
      }
      acc += double(L) / double(rank);
    }
    total += acc / double(n_pos);
  }
  return total / double(N);
}

// ---------------------------------------------------------------------------
// Single-predominant confusion

struct ConfusionResult {
  std::vector<std::vector<int64_t>> matrix;  // rows = truth, cols = prediction
  double accuracy = 0;
};

inline ConfusionResult confusion_single(const ScoreMatrix& sm) {
  sm.validate();
  const int64_t N = sm.rows(), M = sm.cols();
  ConfusionResult out;
  out.matrix.assign(size_t(M), std::vector<int64_t>(size_t(M), 0));
  int64_t correct = 0;
  for (int64_t i = 0; i < N; ++i) {
    int64_t truth_c = -1, n_pos = 0;
    for (int64_t c = 0; c < M; ++c)
      if (sm.truth[size_t(i)][size_t(c)]) {
        truth_c = c;
        ++n_pos;
      }
    if (n_pos != 1)
      throw ConfigError("confusion_single: row " + std::to_string(i) +
                        " does not have exactly one positive label");
    int64_t pred = 0;  // argmax, ties to the lowest index
    for (int64_t c = 1; c < M; ++c)
      if (sm.scores[size_t(i)][size_t(c)] > sm.scores[size_t(i)][size_t(pred)]) pred = c;
    out.matrix[size_t(truth_c)][size_t(pred)]++;
    if (pred == truth_c) ++correct;
  }
  out.accuracy = N > 0 ? double(correct) / double(N) : 0.0;
  return out;
}

}  // namespace timbre
