// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "timbre/common.hpp"
#include "timbre/loudness.hpp"
#include "timbre/manifest.hpp"

namespace timbre {

// Desk-scale synthetic corpus: additive-synthesis "instruments" grouped into
// timbral families. Families are separable by harmonic profile; instruments
// within a family are small perturbations of the family archetype.

struct SyntheticInstrumentSpec {
  int family_id = 0;
  std::string name;
  std::vector<double> harmonic_amplitudes;  // relative partial gains
  double inharmonicity = 0.0;               // partial k at f0*k*sqrt(1+B*k^2)
  double attack_s = 0.01;
  double decay_s = 1.0;                     // exponential decay time constant
  double vibrato_rate_hz = 0.0;
  double vibrato_depth_cents = 0.0;
  double f0_lo = 110.0, f0_hi = 220.0;      // per-family pitch range
};

struct FamilyArchetype {
  const char* name;
  std::vector<double> amps;
  double inharmonicity;
  double attack_s, decay_s;
  double vib_rate, vib_cents;
};

inline const std::vector<FamilyArchetype>& family_archetypes() {
  static const std::vector<FamilyArchetype> k = {
      {"pluck", {1.0, 0.5, 0.33, 0.25, 0.2, 0.16, 0.14, 0.12}, 1e-4, 0.005, 0.35, 0.0, 0.0},
      {"bow", {1.0, 0.45, 0.55, 0.3, 0.35, 0.2, 0.22, 0.12, 0.1, 0.08}, 0.0, 0.12, 2.5, 5.5, 18.0},
      {"brass", {0.5, 0.8, 1.0, 0.85, 0.6, 0.4, 0.25, 0.15, 0.08}, 0.0, 0.06, 2.0, 4.5, 8.0},
      {"reed", {1.0, 0.1, 0.75, 0.12, 0.5, 0.1, 0.3, 0.05, 0.15}, 0.0, 0.04, 2.2, 5.0, 6.0},
      {"flute", {1.0, 0.25, 0.08, 0.03, 0.01}, 0.0, 0.09, 2.4, 5.2, 12.0},
      {"bell", {1.0, 0.0, 0.6, 0.0, 0.45, 0.0, 0.25, 0.0, 0.15}, 6e-3, 0.002, 0.5, 0.0, 0.0},
      {"organ", {0.9, 1.0, 0.85, 0.8, 0.7, 0.65, 0.55, 0.5, 0.4, 0.35}, 0.0, 0.03, 3.5, 0.0, 0.0},
      {"lead", {1.0, 0.0, 0.33, 0.0, 0.2, 0.0, 0.14, 0.0, 0.11, 0.0, 0.09}, 0.0, 0.02, 3.0, 6.0, 25.0},
  };
  return k;
}

// Build per-instrument specs: `per_family` jittered variants of each family
// archetype. Pitch ranges tile one octave per family across [110, 1760] Hz.
inline std::vector<SyntheticInstrumentSpec> default_instrument_specs(int n_families,
                                                                     int per_family,
                                                                     uint64_t seed) {
  const auto& archetypes = family_archetypes();
  if (n_families < 2 || n_families > int(archetypes.size()))
    throw ConfigError("default_instrument_specs: n_families must be in [2, " +
                      std::to_string(archetypes.size()) + "]");
  std::vector<SyntheticInstrumentSpec> specs;
  for (int fam = 0; fam < n_families; ++fam) {
    const auto& arch = archetypes[size_t(fam)];
    const double lo = 110.0 * std::pow(2.0, 3.0 * fam / 7.0);
    for (int ins = 0; ins < per_family; ++ins) {
      Rng rng(derive_seed(seed, {0x696e7374ULL, uint64_t(fam), uint64_t(ins)}));
      SyntheticInstrumentSpec s;
      s.family_id = fam;
      s.name = std::string(arch.name) + "_" + std::to_string(ins);
      s.harmonic_amplitudes.resize(arch.amps.size());
      for (size_t k = 0; k < arch.amps.size(); ++k)
        s.harmonic_amplitudes[k] = arch.amps[k] * std::exp(0.18 * rng.normal());
      s.inharmonicity = arch.inharmonicity * std::exp(0.25 * rng.normal());
      s.attack_s = std::max(0.001, arch.attack_s * std::exp(0.2 * rng.normal()));
      s.decay_s = std::max(0.05, arch.decay_s * std::exp(0.2 * rng.normal()));
      s.vibrato_rate_hz =
          arch.vib_rate > 0 ? std::max(0.5, arch.vib_rate + 0.5 * rng.normal()) : 0.0;
      s.vibrato_depth_cents =
          arch.vib_cents > 0 ? std::max(0.0, arch.vib_cents * std::exp(0.2 * rng.normal())) : 0.0;
      s.f0_lo = lo;
      s.f0_hi = 2.0 * lo;
      specs.push_back(std::move(s));
    }
  }
  return specs;
}

// One synthesized note: additive partials with inharmonicity, attack/decay
// envelope and optional vibrato. Peak-normalized to 0.5.
inline Waveform synth_note(const SyntheticInstrumentSpec& spec, double f0, double duration_s,
                           int sample_rate, Rng& rng) {
  const int64_t n = int64_t(std::llround(duration_s * sample_rate));
  std::vector<double> acc(size_t(n), 0.0);
  const double nyquist = sample_rate / 2.0;
  const double vib_scale = std::log(2.0) * spec.vibrato_depth_cents / 1200.0;

  for (size_t k = 0; k < spec.harmonic_amplitudes.size(); ++k) {
    const double amp = spec.harmonic_amplitudes[k];
    if (amp <= 0.0) continue;
    const double kk = double(k + 1);
    const double fk = f0 * kk * std::sqrt(1.0 + spec.inharmonicity * kk * kk);
    if (fk >= nyquist * 0.95) break;
    double phase = 2.0 * M_PI * rng.uniform();
    for (int64_t i = 0; i < n; ++i) {
      const double t = double(i) / sample_rate;
      double f_inst = fk;
      if (spec.vibrato_rate_hz > 0.0 && spec.vibrato_depth_cents > 0.0)
        f_inst *= std::exp(vib_scale * std::sin(2.0 * M_PI * spec.vibrato_rate_hz * t));
      phase += 2.0 * M_PI * f_inst / sample_rate;
      acc[size_t(i)] += amp * std::sin(phase);
    }
  }

  for (int64_t i = 0; i < n; ++i) {
    const double t = double(i) / sample_rate;
    const double att = spec.attack_s > 0 ? std::min(1.0, t / spec.attack_s) : 1.0;
    const double dec = std::exp(-std::max(0.0, t - spec.attack_s) / spec.decay_s);
    acc[size_t(i)] *= att * dec;
  }

  double pk = 0.0;
  for (double v : acc) pk = std::max(pk, std::fabs(v));
  const double scale = pk > 0.0 ? 0.5 / pk : 0.0;
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(size_t(n));
  for (int64_t i = 0; i < n; ++i) w.samples[size_t(i)] = float(acc[size_t(i)] * scale);
  return w;
}

struct SynthCorpus {
  LabelSpace labels;
  std::vector<ManifestEntry> entries;
};

// Generate the monophonic note corpus: 16-bit PCM WAVs at 16 kHz plus a
// manifest. Fully deterministic in (specs, seed).
inline SynthCorpus synth_corpus(const std::vector<SyntheticInstrumentSpec>& specs,
                                int notes_per_instrument, double duration_s, uint64_t seed,
                                const std::string& out_dir, int sample_rate = 16000) {
  if (duration_s < 1.0) throw ConfigError("synth_corpus: duration_s must be >= 1");
  int n_families = 0;
  for (const auto& s : specs) n_families = std::max(n_families, s.family_id + 1);
  if (n_families < 2) throw ConfigError("synth_corpus: need at least 2 families");

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "audio");

  SynthCorpus corpus;
  corpus.labels.coarse_names.resize(size_t(n_families));
  const auto& archetypes = family_archetypes();
  for (int fam = 0; fam < n_families; ++fam)
    corpus.labels.coarse_names[size_t(fam)] =
        fam < int(archetypes.size()) ? archetypes[size_t(fam)].name : "family" + std::to_string(fam);

  for (size_t si = 0; si < specs.size(); ++si) {
    const auto& spec = specs[si];
    const int fine_id = int(si);
    corpus.labels.fine_names.push_back(spec.name);
    corpus.labels.fine_to_coarse.push_back(spec.family_id);
    for (int note = 0; note < notes_per_instrument; ++note) {
      Rng rng(derive_seed(seed, {0x6e6f7465ULL, uint64_t(si), uint64_t(note)}));
      const double f0 = spec.f0_lo * std::pow(spec.f0_hi / spec.f0_lo, rng.uniform());
      Waveform w = synth_note(spec, f0, duration_s, sample_rate, rng);
      ManifestEntry e;
      e.id = spec.name + "_n" + std::to_string(note);
      e.path = (fs::path(out_dir) / "audio" / (e.id + ".wav")).string();
      e.fine_label = fine_id;
      e.coarse_labels = {spec.family_id};
      e.group_id = spec.name;
      e.split = Split::kTrain;
      e.duration_s = duration_s;
      save_wav(e.path, w);
      corpus.entries.push_back(std::move(e));
    }
  }
  corpus.labels.validate();
  return corpus;
}

// Polyphonic mixtures: sum k loudness-matched notes from k distinct families.
// Coarse labels are the union of source families; each mixture is its own
// group.
inline std::vector<ManifestEntry> make_polyphonic(const std::vector<ManifestEntry>& entries,
                                                  int k_min, int k_max, int n_mixtures,
                                                  uint64_t seed, const std::string& out_dir,
                                                  double mix_target_lufs = -12.0) {
  if (k_min < 1 || k_max < k_min) throw ConfigError("make_polyphonic: bad k range");
  std::map<int, std::vector<size_t>> by_family;
  for (size_t i = 0; i < entries.size(); ++i)
    for (int fam : entries[i].coarse_labels) by_family[fam].push_back(i);
  if (int(by_family.size()) < k_max)
    throw ConfigError("make_polyphonic: need at least " + std::to_string(k_max) +
                      " distinct families, have " + std::to_string(by_family.size()));
  std::vector<int> families;
  for (auto& [fam, idx] : by_family) families.push_back(fam);

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "audio");

  std::vector<ManifestEntry> mixtures;
  for (int m = 0; m < n_mixtures; ++m) {
    Rng rng(derive_seed(seed, {0x6d697855ULL, uint64_t(m)}));
    const int k = k_min + int(rng.uniform_int(k_max - k_min + 1));

    // k distinct families, then one source note from each.
    std::vector<int> chosen;
    {
      auto perm = rng.permutation(int64_t(families.size()));
      for (int i = 0; i < k; ++i) chosen.push_back(families[size_t(perm[size_t(i)])]);
    }
    std::sort(chosen.begin(), chosen.end());

    Waveform mix;
    for (int fam : chosen) {
      const auto& pool = by_family[fam];
      const auto& src = entries[pool[size_t(rng.uniform_int(int64_t(pool.size())))]];
      Waveform w = load_wav(src.path);
      NormalizeResult norm = normalize_lufs(w, mix_target_lufs);
      if (mix.samples.empty()) {
        mix = std::move(norm.audio);
      } else {
        const size_t n = std::min(mix.samples.size(), norm.audio.samples.size());
        mix.samples.resize(n);
        for (size_t i = 0; i < n; ++i) mix.samples[i] += norm.audio.samples[i];
      }
    }
    if (k > 1) mix = normalize_lufs(mix, mix_target_lufs).audio;

    ManifestEntry e;
    e.id = "mix" + std::to_string(m);
    e.path = (fs::path(out_dir) / "audio" / (e.id + ".wav")).string();
    e.fine_label = -1;
    e.coarse_labels = chosen;
    e.group_id = "mixgroup_" + std::to_string(m);
    e.split = Split::kTrain;
    e.duration_s = double(mix.samples.size()) / mix.sample_rate;
    save_wav(e.path, mix);
    mixtures.push_back(std::move(e));
  }
  return mixtures;
}

}  // namespace timbre
