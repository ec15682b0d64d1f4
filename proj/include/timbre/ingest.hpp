// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "timbre/common.hpp"
#include "timbre/manifest.hpp"
#include "timbre/wav.hpp"

namespace timbre {

namespace fs = std::filesystem;

struct IngestResult {
  LabelSpace labels;
  std::vector<ManifestEntry> entries;
  std::vector<EntryError> errors;  // per-entry problems (missing files etc.)
};

namespace detail {

// NSynth subsets may live directly in root (examples.json + audio/) or in
// nsynth-train/-valid/-test style subdirectories.
inline std::vector<fs::path> find_nsynth_subsets(const fs::path& root) {
  std::vector<fs::path> subsets;
  if (fs::exists(root / "examples.json")) subsets.push_back(root);
  if (fs::is_directory(root)) {
    std::vector<fs::path> dirs;
    for (const auto& de : fs::directory_iterator(root))
      if (de.is_directory() && fs::exists(de.path() / "examples.json")) dirs.push_back(de.path());
    std::sort(dirs.begin(), dirs.end());
    subsets.insert(subsets.end(), dirs.begin(), dirs.end());
  }
  return subsets;
}

}  // namespace detail

// NSynth-layout ingestion. Metadata is a JSON object keyed by note id; each
// value carries the instrument and its family. One entry per note; fine label
// is the instrument, coarse label its family, groups follow instruments.
// Train/valid subsets are pooled and re-split: 4% of entries go to validation,
// so every instrument seen in validation is also seen in training.
inline IngestResult ingest_nsynth(const std::string& root_dir, uint64_t seed = 0,
                                  double val_fraction = 0.04) {
  const fs::path root(root_dir);
  auto subsets = detail::find_nsynth_subsets(root);
  if (subsets.empty()) throw IoError("no examples.json found under: " + root_dir);

  struct Note {
    std::string id;
    fs::path audio;
    std::string instrument, family;
  };
  std::vector<Note> notes;
  std::set<std::string> instruments;
  std::map<std::string, std::string> instrument_family;

  for (const auto& subset : subsets) {
    std::ifstream f(subset / "examples.json");
    if (!f) throw IoError("cannot open " + (subset / "examples.json").string());
    nlohmann::json meta;
    try {
      f >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad JSON in " + (subset / "examples.json").string() + ": " + e.what());
    }
    if (!meta.is_object()) throw FormatError("examples.json must be an object: " + subset.string());
    for (auto it = meta.begin(); it != meta.end(); ++it) {
      const auto& v = it.value();
      Note n;
      n.id = it.key();
      if (v.contains("instrument_str"))
        n.instrument = v.at("instrument_str").get<std::string>();
      else if (v.contains("instrument"))
        n.instrument = "instrument_" + std::to_string(v.at("instrument").get<int64_t>());
      else
        throw FormatError("note " + n.id + " has no instrument field");
      if (v.contains("instrument_family_str"))
        n.family = v.at("instrument_family_str").get<std::string>();
      else if (v.contains("instrument_family"))
        n.family = "family_" + std::to_string(v.at("instrument_family").get<int64_t>());
      else
        throw FormatError("note " + n.id + " has no instrument family field");
      n.audio = subset / "audio" / (n.id + ".wav");
      instruments.insert(n.instrument);
      auto [fit, inserted] = instrument_family.emplace(n.instrument, n.family);
      if (!inserted && fit->second != n.family)
        throw FormatError("instrument " + n.instrument + " maps to two families");
      notes.push_back(std::move(n));
    }
  }
  std::sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) { return a.id < b.id; });

  IngestResult out;
  std::set<std::string> families;
  for (const auto& [ins, fam] : instrument_family) families.insert(fam);
  out.labels.coarse_names.assign(families.begin(), families.end());
  out.labels.fine_names.assign(instruments.begin(), instruments.end());
  std::map<std::string, int> fine_id, coarse_id;
  for (size_t i = 0; i < out.labels.fine_names.size(); ++i)
    fine_id[out.labels.fine_names[i]] = int(i);
  for (size_t i = 0; i < out.labels.coarse_names.size(); ++i)
    coarse_id[out.labels.coarse_names[i]] = int(i);
  out.labels.fine_to_coarse.resize(out.labels.fine_names.size());
  for (const auto& [ins, fam] : instrument_family)
    out.labels.fine_to_coarse[size_t(fine_id[ins])] = coarse_id[fam];
  out.labels.validate();

  for (const auto& n : notes) {
    ManifestEntry e;
    e.id = n.id;
    e.path = n.audio.string();
    e.fine_label = fine_id[n.instrument];
    e.coarse_labels = {coarse_id[instrument_family.at(n.instrument)]};
    e.group_id = n.instrument;
    e.split = Split::kTrain;
    if (!fs::exists(n.audio)) {
      out.errors.push_back({n.id, "missing audio file: " + n.audio.string()});
      continue;
    }
    try {
      e.duration_s = read_wav_info(e.path).duration_s();
    } catch (const std::runtime_error& err) {
      out.errors.push_back({n.id, err.what()});
      continue;
    }
    out.entries.push_back(std::move(e));
  }

  // Sample-level re-split: a fixed fraction of notes moves to validation.
  const int64_t n = int64_t(out.entries.size());
  const int64_t n_val = std::llround(val_fraction * double(n));
  Rng rng(derive_seed(seed, {0x6e73796eULL}));
  auto perm = rng.permutation(n);
  for (int64_t i = 0; i < n_val; ++i) out.entries[size_t(perm[size_t(i)])].split = Split::kVal;
  return out;
}

// The eleven predominant-instrument class codes used by the IRMAS layout.
inline const std::vector<std::string>& irmas_codes() {
  static const std::vector<std::string> k = {"cel", "cla", "flu", "gac", "gel", "org",
                                             "pia", "sax", "tru", "vio", "voi"};
  return k;
}

inline const std::vector<std::string>& irmas_code_names() {
  static const std::vector<std::string> k = {
      "cello",        "clarinet", "flute",  "acoustic guitar", "electric guitar", "organ",
      "piano",        "saxophone", "trumpet", "violin",          "voice"};
  return k;
}

inline LabelSpace irmas_label_space() {
  LabelSpace ls;
  ls.coarse_names = irmas_codes();
  ls.validate();
  return ls;
}

inline int irmas_code_id(const std::string& code) {
  const auto& codes = irmas_codes();
  auto it = std::find(codes.begin(), codes.end(), code);
  return it == codes.end() ? -1 : int(it - codes.begin());
}

enum class IrmasMode { kTrain, kTest };

namespace detail {

// Training filenames carry take suffixes ("...__2.wav"); clips sharing the
// prefix come from the same source excerpt and must stay in one split group.
inline std::string irmas_group(const std::string& code, const std::string& stem) {
  size_t pos = stem.rfind("__");
  std::string base = stem;
  if (pos != std::string::npos) {
    bool digits = pos + 2 < stem.size();
    for (size_t i = pos + 2; i < stem.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(stem[i]))) digits = false;
    if (digits) base = stem.substr(0, pos);
  }
  return code + "/" + base;
}

}  // namespace detail

// IRMAS-layout ingestion. Train mode: one class-coded folder per instrument,
// each clip labeled by its folder. Test mode: audio files with a sibling .txt
// listing one class code per line.
inline IngestResult ingest_irmas(const std::string& root_dir, IrmasMode mode) {
  const fs::path root(root_dir);
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root_dir);
  IngestResult out;
  out.labels = irmas_label_space();

  if (mode == IrmasMode::kTrain) {
    std::vector<fs::path> class_dirs;
    for (const auto& de : fs::directory_iterator(root)) {
      if (!de.is_directory()) continue;
      const std::string name = de.path().filename().string();
      if (name.empty() || name[0] == '.') continue;
      if (irmas_code_id(name) < 0)
        throw FormatError("unknown class code folder: " + de.path().string());
      class_dirs.push_back(de.path());
    }
    if (class_dirs.empty()) throw IoError("no class folders under: " + root_dir);
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& dir : class_dirs) {
      const std::string code = dir.filename().string();
      const int cid = irmas_code_id(code);
      std::vector<fs::path> wavs;
      for (const auto& de : fs::directory_iterator(dir))
        if (de.is_regular_file() && de.path().extension() == ".wav") wavs.push_back(de.path());
      std::sort(wavs.begin(), wavs.end());
      for (const auto& p : wavs) {
        ManifestEntry e;
        e.id = code + "/" + p.stem().string();
        e.path = p.string();
        e.fine_label = -1;
        e.coarse_labels = {cid};
        e.group_id = detail::irmas_group(code, p.stem().string());
        e.split = Split::kTrain;
        try {
          e.duration_s = read_wav_info(e.path).duration_s();
        } catch (const std::runtime_error& err) {
          out.errors.push_back({e.id, err.what()});
          continue;
        }
        out.entries.push_back(std::move(e));
      }
    }
  } else {
    std::vector<fs::path> wavs;
    for (const auto& de : fs::recursive_directory_iterator(root))
      if (de.is_regular_file() && de.path().extension() == ".wav") wavs.push_back(de.path());
    std::sort(wavs.begin(), wavs.end());
    if (wavs.empty()) throw IoError("no wav files under: " + root_dir);
    for (const auto& p : wavs) {
      fs::path label_path = p;
      label_path.replace_extension(".txt");
      if (!fs::exists(label_path)) {
        out.errors.push_back({p.string(), "missing label file: " + label_path.string()});
        continue;
      }
      std::ifstream lf(label_path);
      std::set<int> labels;
      std::string line;
      while (std::getline(lf, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
          line.pop_back();
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        const std::string code = line.substr(start);
        const int cid = irmas_code_id(code);
        if (cid < 0)
          throw FormatError("unknown class code \"" + code + "\" in " + label_path.string());
        labels.insert(cid);
      }
      if (labels.empty()) {
        out.errors.push_back({p.string(), "empty label file: " + label_path.string()});
        continue;
      }
      ManifestEntry e;
      e.id = p.stem().string();
      e.path = p.string();
      e.fine_label = -1;
      e.coarse_labels.assign(labels.begin(), labels.end());
      e.group_id = e.id;
      e.split = Split::kTest;
      try {
        e.duration_s = read_wav_info(e.path).duration_s();
      } catch (const std::runtime_error& err) {
        out.errors.push_back({e.id, err.what()});
        continue;
      }
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace timbre
