// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <set>

#include "support.hpp"
#include "timbre/ingest.hpp"
#include "timbre/loudness.hpp"
#include "timbre/manifest.hpp"
#include "timbre/synth.hpp"
#include "timbre/wav.hpp"

using namespace timbre;
using testsup::TmpDir;

TEST_CASE("wav io") {
  TmpDir tmp("wav");

  SECTION("stereo downmix is the channel mean") {
    WavData d;
    d.sample_rate = 16000;
    d.channels = 2;
    for (int i = 0; i < 800; ++i) {
      d.samples.push_back(1.0f);
      d.samples.push_back(0.0f);
    }
    write_wav(tmp.file("st.wav"), d.samples, d.sample_rate, d.channels);
    auto w = load_wav(tmp.file("st.wav"));
    REQUIRE(w.size() == 800);
    for (float v : w.samples) REQUIRE(v == Catch::Approx(0.5).margin(1.0 / 32768));
  }

  SECTION("downmix linearity: stereo(x,x) equals mono(x)") {
    auto x = testsup::sine(523.0, 0.1, 16000);
    std::vector<float> inter;
    for (float v : x.samples) {
      inter.push_back(v);
      inter.push_back(v);
    }
    write_wav(tmp.file("mono.wav"), x.samples, 16000, 1);
    write_wav(tmp.file("stereo.wav"), inter, 16000, 2);
    auto a = load_wav(tmp.file("mono.wav"));
    auto b = load_wav(tmp.file("stereo.wav"));
    REQUIRE(a.size() == b.size());
    for (int64_t i = 0; i < a.size(); ++i)
      REQUIRE(a.samples[size_t(i)] == Catch::Approx(b.samples[size_t(i)]).margin(1e-6));
  }

  SECTION("16-bit full-scale negative maps to -1") {
    // hand-assemble one-sample PCM16 file holding -32768
    std::string bytes;
    auto put32 = [&](uint32_t v) {
      for (int b = 0; b < 4; ++b) bytes.push_back(char((v >> (8 * b)) & 0xff));
    };
    auto put16 = [&](uint16_t v) {
      bytes.push_back(char(v & 0xff));
      bytes.push_back(char(v >> 8));
    };
    bytes += "RIFF";
    put32(0);
    bytes += "WAVEfmt ";
    put32(16);
    put16(1);  // PCM
    put16(1);  // mono
    put32(16000);
    put32(32000);
    put16(2);
    put16(16);
    bytes += "data";
    put32(2);
    put16(0x8000);  // -32768
    const uint32_t riff = uint32_t(bytes.size() - 8);
    for (int b = 0; b < 4; ++b) bytes[size_t(4 + b)] = char((riff >> (8 * b)) & 0xff);
    std::ofstream(tmp.file("neg.wav"), std::ios::binary) << bytes;
    auto w = load_wav(tmp.file("neg.wav"));
    REQUIRE(w.size() == 1);
    REQUIRE(w.samples[0] == -1.0f);
  }

  SECTION("round-trip preserves a sine within quantization") {
    auto x = testsup::sine(440.0, 0.25, 16000);
    save_wav(tmp.file("rt.wav"), x);
    auto y = load_wav(tmp.file("rt.wav"));
    REQUIRE(y.size() == x.size());
    REQUIRE(y.sample_rate == 16000);
    for (int64_t i = 0; i < x.size(); ++i)
      REQUIRE(std::abs(y.samples[size_t(i)] - x.samples[size_t(i)]) <= 1.0f / 32768);
  }

  SECTION("header info without decoding") {
    auto x = testsup::sine(100.0, 0.5, 8000);
    save_wav(tmp.file("info.wav"), x);
    auto info = read_wav_info(tmp.file("info.wav"));
    REQUIRE(info.sample_rate == 8000);
    REQUIRE(info.channels == 1);
    REQUIRE(info.frames == 4000);
    REQUIRE(info.duration_s() == Catch::Approx(0.5));
  }

  SECTION("malformed header fails") {
    std::ofstream(tmp.file("bad.wav"), std::ios::binary) << "not a riff file";
    REQUIRE_THROWS_AS(load_wav(tmp.file("bad.wav")), FormatError);
  }
}

TEST_CASE("resample") {
  SECTION("identity at the same rate") {
    auto x = testsup::sine(440.0, 0.2, 16000);
    auto y = resample(x, 16000);
    REQUIRE(y.size() == x.size());
    for (int64_t i = 0; i < x.size(); ++i)
      REQUIRE(y.samples[size_t(i)] == Catch::Approx(x.samples[size_t(i)]).margin(1e-6));
  }

  SECTION("length arithmetic 44100 to 16000") {
    auto x = testsup::sine(440.0, 1.0, 44100);
    auto y = resample(x, 16000);
    REQUIRE(y.sample_rate == 16000);
    REQUIRE(y.size() == 16000);
  }

  SECTION("1 kHz tone stays at 1 kHz") {
    auto x = testsup::sine(1000.0, 1.0, 44100);
    auto y = resample(x, 16000);
    const double peak_hz = testsup::dominant_hz(y.samples, 16000, 4096);
    const double bin = 16000.0 / 4096.0;
    REQUIRE(std::abs(peak_hz - 1000.0) <= bin + 1e-9);
  }
}

TEST_CASE("loudness") {
  SECTION("silence is gated to negative infinity") {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(16000, 0.0f);
    REQUIRE(measure_lufs(w) == kNegInfLoudness);
    REQUIRE_THROWS_AS(normalize_lufs(w, -12.0), FormatError);
  }

  SECTION("full-scale 997 Hz sine lands at -3.01 LUFS") {
    auto w = testsup::sine(997.0, 2.0, 48000, 1.0f);
    REQUIRE(measure_lufs(w) == Catch::Approx(-3.01).margin(0.1));
  }

  SECTION("gain law: scaling by g moves loudness by 20 log10 g") {
    auto w = testsup::sine(440.0, 1.5, 16000, 0.5f);
    const double base = measure_lufs(w);
    for (double g : {0.5, 0.25, 1.4}) {
      Waveform s = w;
      for (auto& v : s.samples) v = float(v * g);
      REQUIRE(measure_lufs(s) - base == Catch::Approx(20.0 * std::log10(g)).margin(0.1));
    }
  }

  SECTION("normalize hits the target and is idempotent") {
    auto w = testsup::sine(997.0, 2.0, 48000, 1.0f);
    auto r = normalize_lufs(w, -12.0);
    REQUIRE(measure_lufs(r.audio) == Catch::Approx(-12.0).margin(0.2));
    REQUIRE(r.gain == Catch::Approx(std::pow(10.0, (-12.0 - measure_lufs(w)) / 20.0)).epsilon(1e-6));
    REQUIRE_FALSE(r.clipped);
    auto r2 = normalize_lufs(r.audio, -12.0);
    REQUIRE(r2.gain == Catch::Approx(1.0).margin(0.025));  // within 0.2 dB of unity
  }

  SECTION("already at target means unity gain") {
    auto w = normalize_lufs(testsup::sine(440.0, 1.0, 16000), -12.0).audio;
    auto r = normalize_lufs(w, -12.0);
    REQUIRE(std::abs(20.0 * std::log10(r.gain)) <= 0.2);
  }

  SECTION("upward normalization of a loud square clips and flags") {
    Waveform w;
    w.sample_rate = 16000;
    for (int i = 0; i < 16000; ++i) w.samples.push_back(i % 20 < 10 ? 0.9f : -0.9f);
    auto r = normalize_lufs(w, measure_lufs(w) + 6.0);  // ~2x gain on 0.9 peaks
    REQUIRE(r.clipped);
    for (float v : r.audio.samples) REQUIRE((v >= -1.0f && v <= 1.0f));
  }

  SECTION("k-weighting biquads are stable at common rates") {
    for (double fs : {16000.0, 22050.0, 44100.0, 48000.0}) {
      auto [shelf, hp] = k_weighting(fs);
      REQUIRE(shelf.stable());
      REQUIRE(hp.stable());
    }
  }
}

TEST_CASE("energy filter") {
  TmpDir tmp("efilter");
  std::vector<ManifestEntry> entries;
  auto add = [&](const std::string& id, float amp) {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(16000, amp);
    for (size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = amp * float(std::sin(2 * M_PI * 440.0 * double(i) / 16000));
    save_wav(tmp.file(id + ".wav"), w);
    ManifestEntry e;
    e.id = id;
    e.path = tmp.file(id + ".wav");
    e.coarse_labels = {0};
    e.group_id = id;
    entries.push_back(e);
  };
  add("silent", 0.0f);
  add("loud", 0.7f);
  add("quiet", 0.00005f);

  std::vector<EntryError> errors;
  auto kept = energy_filter(entries, 1e-4, &errors);
  REQUIRE(errors.empty());
  REQUIRE(kept.size() == 1);
  REQUIRE(kept[0].id == "loud");

  SECTION("unreadable file becomes an entry error, not a failure") {
    ManifestEntry bad;
    bad.id = "ghost";
    bad.path = tmp.file("missing.wav");
    bad.coarse_labels = {0};
    bad.group_id = "ghost";
    entries.push_back(bad);
    errors.clear();
    auto kept2 = energy_filter(entries, 1e-4, &errors);
    REQUIRE(kept2.size() == 1);
    REQUIRE(errors.size() == 1);
    REQUIRE(errors[0].id == "ghost");
  }

  SECTION("independent recount agrees") {
    // brute force: RMS of the first second per file
    size_t manual = 0;
    for (const auto& e : entries) {
      auto w = first_second(load_wav(e.path));
      if (rms(w) >= 1e-4) ++manual;
    }
    REQUIRE(manual == kept.size());
  }
}

TEST_CASE("synthetic corpus") {
  SECTION("archetypes cover eight distinct families") {
    const auto& arch = family_archetypes();
    REQUIRE(arch.size() == 8);
    std::set<std::string> names;
    for (const auto& a : arch) names.insert(a.name);
    REQUIRE(names.size() == 8);
  }

  SECTION("spec count arithmetic") {
    auto specs = default_instrument_specs(4, 3, 7);
    REQUIRE(specs.size() == 12);
    for (const auto& s : specs) {
      REQUIRE(!s.harmonic_amplitudes.empty());
      REQUIRE(s.f0_lo > 0);
      REQUIRE(s.f0_hi > s.f0_lo);
    }
  }

  SECTION("note fundamental matches the requested pitch") {
    SyntheticInstrumentSpec s;
    s.family_id = 0;
    s.name = "probe";
    s.harmonic_amplitudes = {1.0, 0.25, 0.1};
    s.inharmonicity = 0.0;
    s.attack_s = 0.005;
    s.decay_s = 2.0;
    s.vibrato_rate_hz = 0.0;
    s.vibrato_depth_cents = 0.0;
    s.f0_lo = 200;
    s.f0_hi = 400;
    Rng rng(3);
    auto w = synth_note(s, 261.63, 1.0, 16000, rng);
    const double hz = testsup::dominant_hz(w.samples, 16000, 16384);
    REQUIRE(std::abs(hz - 261.63) <= 16000.0 / 16384.0 + 1e-9);
  }

  SECTION("deterministic given the seed") {
    TmpDir a("synth_a"), b("synth_b");
    auto specs = default_instrument_specs(3, 2, 11);
    auto ca = synth_corpus(specs, 2, 1.0, 42, a.str());
    auto cb = synth_corpus(specs, 2, 1.0, 42, b.str());
    REQUIRE(ca.entries.size() == cb.entries.size());
    REQUIRE(ca.entries.size() == 12);
    for (size_t i = 0; i < ca.entries.size(); ++i) {
      REQUIRE(ca.entries[i].id == cb.entries[i].id);
      auto wa = load_wav(ca.entries[i].path);
      auto wb = load_wav(cb.entries[i].path);
      REQUIRE(wa.samples == wb.samples);
    }
  }

  SECTION("corpus labels are consistent") {
    TmpDir t("synth_l");
    auto specs = default_instrument_specs(3, 2, 5);
    auto c = synth_corpus(specs, 1, 1.0, 9, t.str());
    c.labels.validate();
    REQUIRE(c.labels.fine_names.size() == 6);
    REQUIRE(c.labels.coarse_names.size() == 3);
    for (const auto& e : c.entries) {
      REQUIRE(e.coarse_labels.size() == 1);
      REQUIRE(e.coarse_labels[0] == c.labels.fine_to_coarse[size_t(e.fine_label)]);
      REQUIRE(first_second(load_wav(e.path)).size() == 16000);
    }
  }
}

TEST_CASE("polyphonic mixtures") {
  TmpDir tmp("poly");
  auto specs = default_instrument_specs(4, 1, 21);
  auto mono = synth_corpus(specs, 2, 1.0, 21, tmp.file("mono"));

  SECTION("k=1 mixture equals its loudness-normalized source") {
    auto mixes = make_polyphonic(mono.entries, 1, 1, 4, 5, tmp.file("k1"));
    REQUIRE(mixes.size() == 4);
    for (const auto& m : mixes) {
      REQUIRE(m.coarse_labels.size() == 1);
      auto w = load_wav(m.path);
      // find a source of that family whose normalization matches
      bool matched = false;
      for (const auto& src : mono.entries) {
        if (src.coarse_labels != m.coarse_labels) continue;
        auto norm = normalize_lufs(load_wav(src.path), -12.0).audio;
        if (norm.size() != w.size()) continue;
        double maxdiff = 0;
        for (int64_t i = 0; i < w.size(); ++i)
          maxdiff = std::max(maxdiff, double(std::abs(norm.samples[size_t(i)] - w.samples[size_t(i)])));
        if (maxdiff <= 2.5 / 32768) matched = true;
      }
      REQUIRE(matched);
    }
  }

  SECTION("k=3 labels are the union of distinct source families") {
    auto mixes = make_polyphonic(mono.entries, 3, 3, 6, 6, tmp.file("k3"));
    for (const auto& m : mixes) {
      REQUIRE(m.coarse_labels.size() == 3);
      std::set<int> s(m.coarse_labels.begin(), m.coarse_labels.end());
      REQUIRE(s.size() == 3);
      REQUIRE(std::is_sorted(m.coarse_labels.begin(), m.coarse_labels.end()));
    }
  }

  SECTION("label multiplicity tracks the k range") {
    auto mixes = make_polyphonic(mono.entries, 1, 3, 300, 7, tmp.file("kd"));
    int counts[4] = {0, 0, 0, 0};
    for (const auto& m : mixes) counts[m.coarse_labels.size()]++;
    // uniform over {1,2,3}: each near 100 of 300
    for (int k = 1; k <= 3; ++k) {
      REQUIRE(counts[k] > 60);
      REQUIRE(counts[k] < 140);
    }
  }

  SECTION("insufficient families is fatal") {
    std::vector<ManifestEntry> one_family;
    for (const auto& e : mono.entries)
      if (e.coarse_labels[0] == 0) one_family.push_back(e);
    REQUIRE_THROWS_AS(make_polyphonic(one_family, 2, 3, 2, 1, tmp.file("bad")), ConfigError);
  }

  SECTION("deterministic given the seed") {
    auto a = make_polyphonic(mono.entries, 1, 3, 5, 99, tmp.file("da"));
    auto b = make_polyphonic(mono.entries, 1, 3, 5, 99, tmp.file("db"));
    for (size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].coarse_labels == b[i].coarse_labels);
      REQUIRE(load_wav(a[i].path).samples == load_wav(b[i].path).samples);
    }
  }
}

TEST_CASE("splits") {
  auto make_entries = [](int n_groups, int per_group) {
    std::vector<ManifestEntry> v;
    for (int g = 0; g < n_groups; ++g)
      for (int i = 0; i < per_group; ++i) {
        ManifestEntry e;
        e.id = "g" + std::to_string(g) + "_" + std::to_string(i);
        e.path = e.id;
        e.coarse_labels = {0};
        e.group_id = "group" + std::to_string(g);
        v.push_back(e);
      }
    return v;
  };

  SECTION("single group degenerates to train with a warning flag") {
    auto v = make_entries(1, 10);
    auto rep = make_splits(v, 0.2, 0);
    REQUIRE(rep.degenerate);
    for (const auto& e : v) REQUIRE(e.split == Split::kTrain);
  }

  SECTION("20 equal groups at 0.15 give exactly 3 validation groups") {
    auto v = make_entries(20, 5);
    auto rep = make_splits(v, 0.15, 123);
    REQUIRE(rep.n_val_groups == 3);
    REQUIRE(rep.realized_val_fraction == Catch::Approx(0.15));
  }

  SECTION("no group straddles splits, ever") {
    auto v = make_entries(13, 7);
    make_splits(v, 0.3, 7);
    std::map<std::string, std::set<Split>> seen;
    for (const auto& e : v) seen[e.group_id].insert(e.split);
    for (const auto& [g, s] : seen) REQUIRE(s.size() == 1);
    auto tr = group_ids_in_split(v, Split::kTrain);
    auto va = group_ids_in_split(v, Split::kVal);
    for (const auto& g : va) REQUIRE(tr.count(g) == 0);
  }

  SECTION("fraction bounds enforced") {
    auto v = make_entries(4, 2);
    REQUIRE_THROWS_AS(make_splits(v, 0.0, 0), ConfigError);
    REQUIRE_THROWS_AS(make_splits(v, 1.0, 0), ConfigError);
  }

  SECTION("train-group subsetting keeps other splits intact") {
    auto v = make_entries(10, 4);
    make_splits(v, 0.2, 5);
    const size_t n_val =
        size_t(std::count_if(v.begin(), v.end(), [](auto& e) { return e.split == Split::kVal; }));
    auto sub = subset_train_groups(v, 0.5, 3);
    const size_t sub_val =
        size_t(std::count_if(sub.begin(), sub.end(), [](auto& e) { return e.split == Split::kVal; }));
    REQUIRE(sub_val == n_val);
    auto kept = group_ids_in_split(sub, Split::kTrain);
    auto orig = group_ids_in_split(v, Split::kTrain);
    REQUIRE(kept.size() == (orig.size() + 1) / 2);
    auto sub2 = subset_train_groups(v, 0.5, 3);
    REQUIRE(sub2.size() == sub.size());
  }
}

TEST_CASE("first second") {
  SECTION("long input is cropped") {
    auto w = testsup::sine(440.0, 4.0, 16000);
    auto c = first_second(w);
    REQUIRE(c.size() == 16000);
    for (int64_t i = 0; i < c.size(); ++i) REQUIRE(c.samples[size_t(i)] == w.samples[size_t(i)]);
  }
  SECTION("short input is zero padded") {
    auto w = testsup::sine(440.0, 0.5, 16000);
    auto c = first_second(w);
    REQUIRE(c.size() == 16000);
    for (int64_t i = 8000; i < 16000; ++i) REQUIRE(c.samples[size_t(i)] == 0.0f);
    REQUIRE(rms(c) <= rms(w) + 1e-12);
  }
}

namespace {

void write_nsynth_fixture(const TmpDir& tmp, int n_notes, bool omit_audio_for_last = false) {
  namespace fs = std::filesystem;
  fs::create_directories(tmp.path() / "audio");
  nlohmann::json meta = nlohmann::json::object();
  const char* instruments[3] = {"organ_a", "flute_b", "organ_c"};
  const char* families[3] = {"organ", "flute", "organ"};
  for (int i = 0; i < n_notes; ++i) {
    const int ins = i % 3;
    const std::string id =
        std::string(instruments[ins]) + "-" + std::to_string(100 + i);
    meta[id] = {{"instrument_str", instruments[ins]}, {"instrument_family_str", families[ins]}};
    if (omit_audio_for_last && i == n_notes - 1) continue;
    save_wav((tmp.path() / "audio" / (id + ".wav")).string(), testsup::sine(220.0, 0.3, 16000));
  }
  std::ofstream(tmp.file("examples.json")) << meta.dump();
}

}  // namespace

TEST_CASE("nsynth-style ingestion") {
  SECTION("miniature fixture: 12 notes, 3 instruments, 2 families") {
    TmpDir tmp("nsynth");
    write_nsynth_fixture(tmp, 12);
    auto res = ingest_nsynth(tmp.str());
    REQUIRE(res.entries.size() == 12);
    REQUIRE(res.errors.empty());
    REQUIRE(res.labels.fine_names.size() == 3);
    REQUIRE(res.labels.coarse_names.size() == 2);
    for (const auto& e : res.entries) {
      REQUIRE(e.coarse_labels.size() == 1);
      REQUIRE(e.coarse_labels[0] == res.labels.fine_to_coarse[size_t(e.fine_label)]);
      REQUIRE(e.group_id == res.labels.fine_names[size_t(e.fine_label)]);
      REQUIRE(e.duration_s == Catch::Approx(0.3));
    }
  }

  SECTION("empty directory is fatal") {
    TmpDir tmp("nsynth_empty");
    REQUIRE_THROWS_AS(ingest_nsynth(tmp.str()), IoError);
  }

  SECTION("missing audio degrades to an entry error") {
    TmpDir tmp("nsynth_miss");
    write_nsynth_fixture(tmp, 6, /*omit_audio_for_last=*/true);
    auto res = ingest_nsynth(tmp.str());
    REQUIRE(res.entries.size() == 5);
    REQUIRE(res.errors.size() == 1);
  }

  SECTION("conflicting family mapping is fatal") {
    TmpDir tmp("nsynth_conflict");
    namespace fs = std::filesystem;
    fs::create_directories(tmp.path() / "audio");
    nlohmann::json meta;
    meta["a-1"] = {{"instrument_str", "organ_a"}, {"instrument_family_str", "organ"}};
    meta["a-2"] = {{"instrument_str", "organ_a"}, {"instrument_family_str", "flute"}};
    std::ofstream(tmp.file("examples.json")) << meta.dump();
    REQUIRE_THROWS_AS(ingest_nsynth(tmp.str()), FormatError);
  }

  SECTION("4% of 100 entries land in validation") {
    TmpDir tmp("nsynth_split");
    write_nsynth_fixture(tmp, 100);
    auto res = ingest_nsynth(tmp.str());
    REQUIRE(res.entries.size() == 100);
    int n_val = 0;
    for (const auto& e : res.entries) n_val += e.split == Split::kVal;
    REQUIRE(n_val == 4);
  }
}

TEST_CASE("irmas-style ingestion") {
  namespace fs = std::filesystem;

  SECTION("train folders carry exactly one label each") {
    TmpDir tmp("irmas_train");
    for (const char* code : {"cel", "gac"}) {
      fs::create_directories(tmp.path() / code);
      for (int i = 0; i < 2; ++i)
        save_wav((tmp.path() / code / ("clip" + std::to_string(i) + ".wav")).string(),
                 testsup::sine(330.0, 0.2, 16000));
    }
    auto res = ingest_irmas(tmp.str(), IrmasMode::kTrain);
    REQUIRE(res.entries.size() == 4);
    for (const auto& e : res.entries) {
      REQUIRE(e.coarse_labels.size() == 1);
      REQUIRE(e.split == Split::kTrain);
    }
    REQUIRE(res.labels.coarse_names.size() == 11);
  }

  SECTION("take suffixes share a split group") {
    TmpDir tmp("irmas_group");
    fs::create_directories(tmp.path() / "pia");
    save_wav((tmp.path() / "pia" / "song__1.wav").string(), testsup::sine(330.0, 0.2, 16000));
    save_wav((tmp.path() / "pia" / "song__2.wav").string(), testsup::sine(330.0, 0.2, 16000));
    save_wav((tmp.path() / "pia" / "other.wav").string(), testsup::sine(330.0, 0.2, 16000));
    auto res = ingest_irmas(tmp.str(), IrmasMode::kTrain);
    REQUIRE(res.entries.size() == 3);
    std::set<std::string> groups;
    for (const auto& e : res.entries) groups.insert(e.group_id);
    REQUIRE(groups.size() == 2);
  }

  SECTION("unknown folder name is fatal") {
    TmpDir tmp("irmas_bad");
    fs::create_directories(tmp.path() / "xyz");
    REQUIRE_THROWS_AS(ingest_irmas(tmp.str(), IrmasMode::kTrain), FormatError);
  }

  SECTION("test mode reads multi-label sidecars") {
    TmpDir tmp("irmas_test");
    save_wav(tmp.file("t1.wav"), testsup::sine(330.0, 0.2, 16000));
    std::ofstream(tmp.file("t1.txt")) << "gac\nvoi\n";
    save_wav(tmp.file("t2.wav"), testsup::sine(330.0, 0.2, 16000));
    std::ofstream(tmp.file("t2.txt")) << "cel\r\n";
    auto res = ingest_irmas(tmp.str(), IrmasMode::kTest);
    REQUIRE(res.entries.size() == 2);
    REQUIRE(res.entries[0].coarse_labels ==
            std::vector<int>{irmas_code_id("gac"), irmas_code_id("voi")});
    REQUIRE(res.entries[1].coarse_labels == std::vector<int>{irmas_code_id("cel")});
    for (const auto& e : res.entries) REQUIRE(e.split == Split::kTest);
  }

  SECTION("unknown code in a label file is fatal and names the file") {
    TmpDir tmp("irmas_badcode");
    save_wav(tmp.file("t1.wav"), testsup::sine(330.0, 0.2, 16000));
    std::ofstream(tmp.file("t1.txt")) << "zzz\n";
    try {
      ingest_irmas(tmp.str(), IrmasMode::kTest);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      REQUIRE(std::string(e.what()).find("t1.txt") != std::string::npos);
    }
  }

  SECTION("missing label file is an entry error") {
    TmpDir tmp("irmas_nolabel");
    save_wav(tmp.file("t1.wav"), testsup::sine(330.0, 0.2, 16000));
    auto res = ingest_irmas(tmp.str(), IrmasMode::kTest);
    REQUIRE(res.entries.empty());
    REQUIRE(res.errors.size() == 1);
  }
}

TEST_CASE("manifest round trip") {
  TmpDir tmp("manifest");
  std::vector<ManifestEntry> v;
  ManifestEntry e;
  e.id = "a";
  e.path = "/x/a.wav";
  e.fine_label = 3;
  e.coarse_labels = {1, 4};
  e.group_id = "song1";
  e.split = Split::kVal;
  e.duration_s = 2.5;
  v.push_back(e);
  save_manifest(tmp.file("m.jsonl"), v);
  auto back = load_manifest(tmp.file("m.jsonl"));
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].id == "a");
  REQUIRE(back[0].coarse_labels == std::vector<int>{1, 4});
  REQUIRE(back[0].split == Split::kVal);
  REQUIRE(back[0].duration_s == 2.5);

  LabelSpace ls;
  ls.fine_names = {"i0", "i1"};
  ls.coarse_names = {"f0"};
  ls.fine_to_coarse = {0, 0};
  save_label_space(tmp.file("l.json"), ls);
  auto ls2 = load_label_space(tmp.file("l.json"));
  REQUIRE(ls2.fine_names == ls.fine_names);
  REQUIRE(ls2.fine_to_coarse == ls.fine_to_coarse);
}
