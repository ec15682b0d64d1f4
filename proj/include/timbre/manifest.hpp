// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "timbre/audio.hpp"
#include "timbre/common.hpp"

namespace timbre {

using json = nlohmann::json;

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}
inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split name: " + s);
}

// Fine labels (individual instruments) map onto coarse labels (families).
struct LabelSpace {
  std::vector<std::string> fine_names;
  std::vector<std::string> coarse_names;
  std::vector<int> fine_to_coarse;  // index = fine id

  int n_fine() const { return int(fine_names.size()); }
  int n_coarse() const { return int(coarse_names.size()); }

  void validate() const {
    if (fine_to_coarse.size() != fine_names.size())
      throw FormatError("label space: fine_to_coarse length mismatch");
    for (int c : fine_to_coarse)
      if (c < 0 || c >= n_coarse()) throw FormatError("label space: coarse id out of range");
  }

  json to_json() const {
    return json{{"fine_names", fine_names},
                {"coarse_names", coarse_names},
                {"fine_to_coarse", fine_to_coarse}};
  }
  static LabelSpace from_json(const json& j) {
    LabelSpace ls;
    ls.fine_names = j.at("fine_names").get<std::vector<std::string>>();
    ls.coarse_names = j.at("coarse_names").get<std::vector<std::string>>();
    ls.fine_to_coarse = j.at("fine_to_coarse").get<std::vector<int>>();
    ls.validate();
    return ls;
  }
};

struct ManifestEntry {
  std::string id;
  std::string path;
  int fine_label = -1;               // pre-training target; -1 when not applicable
  std::vector<int> coarse_labels;    // fine-tuning targets, sorted, >= 1
  std::string group_id;              // song or instrument identity
  Split split = Split::kTrain;
  double duration_s = 0.0;

  json to_json() const {
    return json{{"id", id},
                {"path", path},
                {"fine_label", fine_label},
                {"coarse_labels", coarse_labels},
                {"group_id", group_id},
                {"split", split_name(split)},
                {"duration_s", duration_s}};
  }
  static ManifestEntry from_json(const json& j) {
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.fine_label = j.at("fine_label").get<int>();
    e.coarse_labels = j.at("coarse_labels").get<std::vector<int>>();
    e.group_id = j.at("group_id").get<std::string>();
    e.split = split_from_name(j.at("split").get<std::string>());
    e.duration_s = j.at("duration_s").get<double>();
    if (e.coarse_labels.empty()) throw FormatError("manifest entry with no coarse labels: " + e.id);
    if (e.group_id.empty()) throw FormatError("manifest entry with empty group id: " + e.id);
    return e;
  }
};

// JSON Lines, one entry per line.
inline void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest: " + path);
  for (const auto& e : entries) f << e.to_json().dump() << "\n";
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      entries.push_back(ManifestEntry::from_json(json::parse(line)));
    } catch (const json::exception& ex) {
      throw FormatError("manifest " + path + " line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return entries;
}

inline void save_label_space(const std::string& path, const LabelSpace& ls) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write label space: " + path);
  f << ls.to_json().dump(2) << "\n";
}

inline LabelSpace load_label_space(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open label space: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& ex) {
    throw FormatError("label space " + path + ": " + ex.what());
  }
  return LabelSpace::from_json(j);
}

// ---------------------------------------------------------------------------
// Filtering and split assignment
// ---------------------------------------------------------------------------

struct EntryError {
  std::string id;
  std::string message;
};

// Keep entries whose first-second RMS reaches the threshold. Audio is resolved
// through `resolve` (usually load_wav over entry.path); unreadable entries are
// collected, not fatal. Order is preserved.
template <typename ResolveFn>
std::vector<ManifestEntry> energy_filter(const std::vector<ManifestEntry>& entries,
                                         double threshold_rms, ResolveFn&& resolve,
                                         std::vector<EntryError>* errors = nullptr) {
  std::vector<ManifestEntry> kept;
  kept.reserve(entries.size());
  for (const auto& e : entries) {
    try {
      Waveform w = resolve(e);
      Waveform head = first_second(w);
      if (rms(head) >= threshold_rms) kept.push_back(e);
    } catch (const std::exception& ex) {
      if (errors) errors->push_back({e.id, ex.what()});
    }
  }
  return kept;
}

inline std::vector<ManifestEntry> energy_filter(const std::vector<ManifestEntry>& entries,
                                                double threshold_rms,
                                                std::vector<EntryError>* errors = nullptr) {
  return energy_filter(
      entries, threshold_rms, [](const ManifestEntry& e) { return load_wav(e.path); }, errors);
}

struct SplitReport {
  int n_groups = 0;
  int n_val_groups = 0;
  double realized_val_fraction = 0.0;
  bool degenerate = false;  // single group: everything stays in train
};

// Assign train/val per group: all entries of one group land in the same split.
// Greedy largest-first fill toward the requested entry fraction.
inline SplitReport make_splits(std::vector<ManifestEntry>& entries, double val_fraction,
                               uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("make_splits: val_fraction must be in (0,1)");
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].group_id.empty()) throw FormatError("make_splits: empty group_id");
    groups[entries[i].group_id].push_back(i);
  }
  SplitReport rep;
  rep.n_groups = int(groups.size());
  for (auto& e : entries) e.split = Split::kTrain;
  if (groups.size() <= 1) {
    rep.degenerate = true;
    return rep;
  }

  // Deterministic shuffle of group order, then greedy fill: a group joins the
  // validation set while doing so keeps the realized fraction closest to the
  // request.
  std::vector<const std::vector<size_t>*> order;
  std::vector<std::string> names;
  for (auto& [name, idx] : groups) names.push_back(name);
  Rng rng(derive_seed(seed, {0x73706c6974ULL}));
  auto perm = rng.permutation(int64_t(names.size()));
  const double total = double(entries.size());
  const int64_t want = int64_t(std::llround(val_fraction * total));
  int64_t assigned = 0;
  for (auto pi : perm) {
    const auto& idx = groups[names[size_t(pi)]];
    const int64_t sz = int64_t(idx.size());
    // Take the group if it moves us toward the target without overshooting
    // more than undershooting.
    if (std::llabs(assigned + sz - want) <= std::llabs(assigned - want) && assigned < want) {
      for (size_t i : idx) entries[i].split = Split::kVal;
      assigned += sz;
      ++rep.n_val_groups;
    }
  }
  rep.realized_val_fraction = double(assigned) / total;
  return rep;
}

inline std::set<std::string> group_ids_in_split(const std::vector<ManifestEntry>& entries,
                                                Split s) {
  std::set<std::string> out;
  for (const auto& e : entries)
    if (e.split == s) out.insert(e.group_id);
  return out;
}

// Data-budget subsetting: keep a deterministic fraction of the train groups
// (rounded up, at least one); val/test entries pass through untouched.
inline std::vector<ManifestEntry> subset_train_groups(const std::vector<ManifestEntry>& entries,
                                                      double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("subset_train_groups: fraction must be in (0,1]");
  if (fraction == 1.0) return entries;
  auto groups = group_ids_in_split(entries, Split::kTrain);
  std::vector<std::string> names(groups.begin(), groups.end());
  if (names.empty()) return entries;
  Rng rng(derive_seed(seed, {0x66726163ULL}));
  auto perm = rng.permutation(int64_t(names.size()));
  const size_t keep_n =
      std::max<size_t>(1, size_t(std::ceil(fraction * double(names.size()))));
  std::set<std::string> keep;
  for (size_t i = 0; i < keep_n && i < names.size(); ++i)
    keep.insert(names[size_t(perm[i])]);
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split != Split::kTrain || keep.count(e.group_id)) out.push_back(e);
  return out;
}

}  // namespace timbre
