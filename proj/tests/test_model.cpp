// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "support.hpp"
#include "timbre/model.hpp"

using namespace timbre;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.sample_rate = 16000;
  c.frontend.n_filters = 8;
  c.frontend.kernel_len = 63;
  c.frontend.stride = 5;
  c.encoder.widths = {4, 8, 12, 24};
  c.encoder.depths = {2, 2, 2, 2};
  c.lde.n_components = 2;
  c.n_out = 3;
  return c;
}

// Layer-by-layer conv-weight arithmetic, written out independently of the
// production counter.
int64_t conv_weights_by_hand(const EncoderConfig& e) {
  int64_t n = int64_t(e.widths[0]) * 9;  // stem, 1 input channel
  for (int s = 0; s < 4; ++s) {
    const int64_t w = e.widths[size_t(s)];
    const int64_t wp = s == 0 ? w : e.widths[size_t(s) - 1];
    for (int j = 0; j < e.depths[size_t(s)]; ++j) {
      n += (s > 0 && j == 0) ? w * wp * 9 : w * w * 9;  // conv1
      if (!e.shared_blocks) n += w * w * 9;             // private conv2
    }
    if (e.shared_blocks) n += w * w * 9;  // one conv2 per stage
    if (s > 0) n += w * wp;               // 1x1 shortcut on the transition
  }
  return n;
}

Tensor<float> sine_batch(double hz, int64_t n_samples, int sample_rate) {
  Tensor<float> t({1, n_samples});
  for (int64_t i = 0; i < n_samples; ++i)
    t[i] = float(0.5 * std::sin(2.0 * M_PI * hz * double(i) / sample_rate));
  return t;
}

}  // namespace

TEST_CASE("mel scale") {
  SECTION("closed-form point") {
    REQUIRE(hz_to_mel(700.0) == Catch::Approx(2595.0 * std::log10(2.0)).epsilon(1e-12));
    REQUIRE(hz_to_mel(700.0) == Catch::Approx(781.17).margin(0.01));
  }

  SECTION("inverse round trip") {
    for (double f : {30.0, 440.0, 2000.0, 8000.0})
      REQUIRE(mel_to_hz(hz_to_mel(f)) == Catch::Approx(f).epsilon(1e-10));
  }

  SECTION("single filter spans the full range exactly") {
    SincFrontendConfig fc;
    fc.n_filters = 1;
    auto p = mel_init(fc);
    REQUIRE(p.low_hz[0] == 0.0);  // f1 = f_min + |0|
    REQUIRE(fc.f_min + fc.min_band_hz + p.band_hz[0] == Catch::Approx(fc.f_max).epsilon(1e-12));
  }

  SECTION("effective cutoffs are ordered and inside the band") {
    SincFrontendConfig fc;
    auto p = mel_init(fc);
    double prev_f1 = 0;
    for (int i = 0; i < fc.n_filters; ++i) {
      const double f1 = fc.f_min + std::abs(p.low_hz[size_t(i)]);
      const double f2 = f1 + fc.min_band_hz + std::abs(p.band_hz[size_t(i)]);
      REQUIRE(f1 > prev_f1);
      REQUIRE(f2 > f1);
      REQUIRE(f2 <= fc.f_max + 1e-9);
      prev_f1 = f1;
    }
  }
}

TEST_CASE("sinc kernels") {
  auto build = [](const std::vector<double>& low, const std::vector<double>& band,
                  int64_t len) {
    Graph<double> g;
    Tensor<double> lo({int64_t(low.size())}), ba({int64_t(band.size())});
    for (size_t i = 0; i < low.size(); ++i) lo[int64_t(i)] = low[i];
    for (size_t i = 0; i < band.size(); ++i) ba[int64_t(i)] = band[i];
    auto k = g.sinc_kernels(g.value(lo), g.value(ba), len, 16000.0, 30.0, 25.0);
    return g.val(k);  // [F, 1, len]
  };

  SECTION("even symmetry holds exactly") {
    auto k = build({970.0, 100.0, -3000.0}, {975.0, 50.0, 2000.0}, 101);
    const int64_t h = 50;
    for (int64_t f = 0; f < 3; ++f)
      for (int64_t n = 1; n <= h; ++n)
        REQUIRE(k.at(f, 0, h - n) == k.at(f, 0, h + n));
  }

  SECTION("kernels are max-normalized") {
    auto k = build({970.0}, {975.0}, 251);
    double mx = 0;
    for (int64_t n = 0; n < 251; ++n) mx = std::max(mx, std::abs(k.at(0, 0, n)));
    REQUIRE(mx == Catch::Approx(1.0).epsilon(1e-12));
  }

  SECTION("band filter concentrates energy in band") {
    // raw params for a [1 kHz, 2 kHz] filter at the default offsets
    auto k = build({1000.0 - 30.0}, {1000.0 - 25.0}, 251);
    std::vector<float> taps(251);
    for (int64_t n = 0; n < 251; ++n) taps[size_t(n)] = float(k.at(0, 0, n));
    auto mag = testsup::spectrum(taps, 16384);
    const double bin_hz = 16000.0 / 16384.0;
    double in_sum = 0, out_sum = 0;
    int64_t in_n = 0, out_n = 0;
    for (size_t b = 1; b < mag.size(); ++b) {
      const double f = double(b) * bin_hz;
      if (f >= 1000.0 && f <= 2000.0) {
        in_sum += mag[b];
        ++in_n;
      } else if (f < 1000.0 / 1.5 || f > 2000.0 * 1.5) {
        out_sum += mag[b];
        ++out_n;
      }
    }
    const double sep_db = 20.0 * std::log10((in_sum / double(in_n)) / (out_sum / double(out_n)));
    REQUIRE(sep_db >= 20.0);
  }

  SECTION("extreme unconstrained parameters stay finite and clamped") {
    auto k = build({-50000.0, 1e6}, {1e7, -1e7}, 63);
    for (int64_t i = 0; i < k.numel(); ++i) REQUIRE(std::isfinite(k[i]));
  }
}

TEST_CASE("forward shapes and values") {
  SECTION("default front-end maps one second to 40 x 98") {
    ModelConfig cfg;
    cfg.encoder.widths = {4, 8, 12, 24};  // light encoder; front-end is the default
    cfg.lde.n_components = 2;
    cfg.n_out = 3;
    ParamStore ps = init_params(cfg, 1);
    Graph<float> g;
    Tensor<float> zeros({2, 16000});
    auto ids = model_forward(g, cfg, ps, zeros, false, false);
    const auto& fm = g.val(ids.feature_map);
    REQUIRE(fm.shape() == std::vector<int64_t>{2, 1, 40, 98});
    for (int64_t i = 0; i < fm.numel(); ++i) REQUIRE(fm[i] == 0.0f);  // log1p(0)
    REQUIRE(g.val(ids.embedding).shape() == std::vector<int64_t>{2, 2 * 24});
    REQUIRE(g.val(ids.logits).shape() == std::vector<int64_t>{2, 3});
  }

  SECTION("embeddings are unit rows") {
    ModelConfig cfg = tiny_config();
    ParamStore ps = init_params(cfg, 2);
    Graph<float> g;
    Rng rng(5);
    Tensor<float> waves({3, 3200});
    for (int64_t i = 0; i < waves.numel(); ++i) waves[i] = float(0.3 * rng.normal());
    auto ids = model_forward(g, cfg, ps, waves, false, false);
    const auto& emb = g.val(ids.embedding);
    for (int64_t r = 0; r < 3; ++r) {
      double n2 = 0;
      for (int64_t c = 0; c < emb.dim(1); ++c) n2 += double(emb.at(r, c)) * emb.at(r, c);
      REQUIRE(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-5));
    }
  }

  SECTION("a pure tone lights up the matching filter channel") {
    ModelConfig cfg;
    cfg.encoder.widths = {4, 8, 12, 24};
    cfg.lde.n_components = 2;
    cfg.n_out = 3;
    ParamStore ps = init_params(cfg, 3);
    SincParams mp = mel_init(cfg.frontend);
    const int probe_c = 20;
    const double f1 = cfg.frontend.f_min + std::abs(mp.low_hz[probe_c]);
    const double f2 = f1 + cfg.frontend.min_band_hz + std::abs(mp.band_hz[probe_c]);
    const double probe_hz = 0.5 * (f1 + f2);

    Graph<float> g;
    auto ids = model_forward(g, cfg, ps, sine_batch(probe_hz, 16000, 16000), false, false);
    const auto& fm = g.val(ids.feature_map);  // [1,1,40,98]
    int best_c = -1;
    double best_e = -1;
    for (int64_t c = 0; c < 40; ++c) {
      double acc = 0;
      for (int64_t t = 0; t < 98; ++t) acc += fm.at(0, 0, c, t);
      if (acc > best_e) {
        best_e = acc;
        best_c = int(c);
      }
    }

    // independent oracle: per-kernel FFT magnitude at the probe frequency
    Graph<double> gg;
    ParamStoreT<double> psd = ps.cast<double>();
    auto kid = gg.sinc_kernels(gg.value(psd.at("frontend.low_hz")),
                               gg.value(psd.at("frontend.band_hz")), cfg.frontend.kernel_len,
                               cfg.sample_rate, cfg.frontend.f_min, cfg.frontend.min_band_hz);
    const auto& kv = gg.val(kid);
    int oracle_c = -1;
    double oracle_mag = -1;
    for (int64_t c = 0; c < 40; ++c) {
      std::vector<float> taps(size_t(cfg.frontend.kernel_len));
      for (int64_t n = 0; n < cfg.frontend.kernel_len; ++n) taps[size_t(n)] = float(kv.at(c, 0, n));
      auto mag = testsup::spectrum(taps, 16384);
      const size_t bin = size_t(std::llround(probe_hz / (16000.0 / 16384.0)));
      if (mag[bin] > oracle_mag) {
        oracle_mag = mag[bin];
        oracle_c = int(c);
      }
    }
    REQUIRE(best_c == oracle_c);
    REQUIRE(std::abs(best_c - probe_c) <= 1);
  }

  SECTION("extreme square-wave input stays finite") {
    ModelConfig cfg = tiny_config();
    ParamStore ps = init_params(cfg, 4);
    Tensor<float> waves({2, 3200});
    for (int64_t i = 0; i < waves.numel(); ++i) waves[i] = (i / 8) % 2 ? 1.0f : -1.0f;
    Graph<float> g;
    auto ids = model_forward(g, cfg, ps, waves, false, false);
    const auto& lg = g.val(ids.logits);
    for (int64_t i = 0; i < lg.numel(); ++i) REQUIRE(std::isfinite(lg[i]));
  }

  SECTION("forward is deterministic") {
    ModelConfig cfg = tiny_config();
    ParamStore a = init_params(cfg, 7), b = init_params(cfg, 7);
    Tensor<float> waves({1, 3200});
    Rng rng(9);
    for (int64_t i = 0; i < waves.numel(); ++i) waves[i] = float(0.2 * rng.normal());
    auto la = forward_logits(cfg, a, waves);
    auto lb = forward_logits(cfg, b, waves);
    REQUIRE(la.vec() == lb.vec());
  }

  SECTION("training-mode batch norm adjusts the running buffers") {
    ModelConfig cfg = tiny_config();
    ParamStore ps = init_params(cfg, 8);
    auto before = ps.at("stem.bn.running_mean").vec();
    Tensor<float> waves({2, 3200});
    Rng rng(10);
    for (int64_t i = 0; i < waves.numel(); ++i) waves[i] = float(0.2 * rng.normal());
    Graph<float> g;
    model_forward(g, cfg, ps, waves, /*training=*/true, false);
    REQUIRE(ps.at("stem.bn.running_mean").vec() != before);
    ParamStore ps2 = init_params(cfg, 8);
    Graph<float> g2;
    model_forward(g2, cfg, ps2, waves, /*training=*/false, false);
    REQUIRE(ps2.at("stem.bn.running_mean").vec() == before);
  }
}

TEST_CASE("weight sharing") {
  SECTION("identical weights in shared slots give identical outputs") {
    ModelConfig shared_cfg = tiny_config();
    shared_cfg.encoder.shared_blocks = true;
    ModelConfig plain_cfg = shared_cfg;
    plain_cfg.encoder.shared_blocks = false;

    ParamStore sp = init_params(shared_cfg, 11);
    ParamStore pp;
    for (const auto& [name, e] : sp.items)
      if (name.find(".conv2s.w") == std::string::npos) pp.add(name, e.value, e.trainable);
    for (int s = 1; s <= 4; ++s) {
      const auto& w = sp.at("s" + std::to_string(s) + ".conv2s.w");
      for (int j = 0; j < plain_cfg.encoder.depths[size_t(s - 1)]; ++j)
        pp.add("s" + std::to_string(s) + ".b" + std::to_string(j) + ".conv2.w", w);
    }

    Tensor<float> waves({2, 3200});
    Rng rng(12);
    for (int64_t i = 0; i < waves.numel(); ++i) waves[i] = float(0.2 * rng.normal());
    auto ls = forward_logits(shared_cfg, sp, waves);
    auto lp = forward_logits(plain_cfg, pp, waves);
    REQUIRE(ls.vec() == lp.vec());
  }

  SECTION("store totals agree with the arithmetic count") {
    for (bool shared : {true, false}) {
      ModelConfig cfg;
      cfg.encoder.shared_blocks = shared;
      cfg.n_out = 11;
      auto pc = count_params(cfg);
      REQUIRE(pc.backbone_conv == conv_weights_by_hand(cfg.encoder));
      ParamStore ps = init_params(cfg, 0);
      REQUIRE(ps.count(/*trainable_only=*/true) == pc.total);
    }
  }
}

TEST_CASE("parameter accounting") {
  ModelConfig cfg;
  cfg.n_out = 11;
  cfg.encoder.depths = {3, 4, 6, 3};

  SECTION("frozen reference values at depths 3-4-6-3") {
    cfg.encoder.shared_blocks = false;
    REQUIRE(count_params(cfg).backbone_conv == 1328784);
    cfg.encoder.shared_blocks = true;
    REQUIRE(count_params(cfg).backbone_conv == 817296);
    const double reduction = 1.0 - 817296.0 / 1328784.0;
    REQUIRE(reduction > 0.30);
    REQUIRE(reduction == Catch::Approx(0.3849).margin(0.0005));
  }

  SECTION("sharing always wins when any stage repeats") {
    for (auto depths : std::vector<std::array<int, 4>>{{2, 2, 2, 2}, {3, 3, 4, 3}, {3, 4, 6, 3}}) {
      ModelConfig c;
      c.n_out = 11;
      c.encoder.depths = depths;
      c.encoder.shared_blocks = true;
      auto sh = count_params(c);
      c.encoder.shared_blocks = false;
      auto un = count_params(c);
      REQUIRE(sh.backbone_conv < un.backbone_conv);
      REQUIRE(sh.backbone_conv == conv_weights_by_hand({depths, {16, 32, 64, 128}, true}));
      REQUIRE(un.backbone_conv == conv_weights_by_hand({depths, {16, 32, 64, 128}, false}));
    }
  }

  SECTION("deeper stages cost strictly more") {
    auto count_at = [](std::array<int, 4> depths) {
      ModelConfig c;
      c.n_out = 11;
      c.encoder.depths = depths;
      return count_params(c).total;
    };
    REQUIRE(count_at({2, 2, 2, 2}) < count_at({3, 3, 4, 3}));
    REQUIRE(count_at({3, 3, 4, 3}) < count_at({3, 4, 6, 3}));
  }
}

TEST_CASE("checkpoints") {
  testsup::TmpDir tmp("ckpt");

  SECTION("round trip is bitwise") {
    ModelConfig cfg = tiny_config();
    Checkpoint ck;
    ck.config = cfg;
    ck.step = 42;
    ck.seed = 7;
    ck.params = init_params(cfg, 7);
    save_checkpoint(tmp.file("a.tfv1"), ck);
    auto back = load_checkpoint(tmp.file("a.tfv1"));
    REQUIRE(back.step == 42);
    REQUIRE(back.seed == 7);
    REQUIRE(model_fingerprint(back.config) == model_fingerprint(cfg));
    REQUIRE(back.params.items.size() == ck.params.items.size());
    for (const auto& [name, e] : ck.params.items) {
      REQUIRE(back.params.at(name).vec() == e.value.vec());
      REQUIRE(back.params.items.at(name).trainable == e.trainable);
    }
    // and a re-save is byte-identical
    save_checkpoint(tmp.file("b.tfv1"), back);
    REQUIRE(std::filesystem::file_size(tmp.file("a.tfv1")) ==
            std::filesystem::file_size(tmp.file("b.tfv1")));
    std::ifstream fa(tmp.file("a.tfv1"), std::ios::binary), fb(tmp.file("b.tfv1"), std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    REQUIRE(ba == bb);
  }

  SECTION("non-finite parameters never leave the process") {
    ModelConfig cfg = tiny_config();
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg, 1);
    ck.params.at("head.b")[0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(save_checkpoint(tmp.file("nan.tfv1"), ck), TrainError);
  }

  SECTION("garbage and truncation are format errors") {
    std::ofstream(tmp.file("junk.tfv1"), std::ios::binary) << "tfv1 but not really";
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("junk.tfv1")), FormatError);
    ModelConfig cfg = tiny_config();
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg, 1);
    save_checkpoint(tmp.file("full.tfv1"), ck);
    const auto sz = std::filesystem::file_size(tmp.file("full.tfv1"));
    std::ifstream in(tmp.file("full.tfv1"), std::ios::binary);
    std::string bytes(size_t(sz) - 64, '\0');
    in.read(bytes.data(), std::streamsize(bytes.size()));
    std::ofstream(tmp.file("cut.tfv1"), std::ios::binary) << bytes;
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("cut.tfv1")), FormatError);
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("not_there.tfv1")), IoError);
  }
}

TEST_CASE("head swap") {
  ModelConfig cfg = tiny_config();  // softmax head, 3 classes
  Checkpoint ck;
  ck.config = cfg;
  ck.step = 100;
  ck.seed = 5;
  ck.params = init_params(cfg, 5);

  SECTION("body is preserved bitwise, head is rebuilt, step resets") {
    auto sw = swap_head(ck, HeadKind::kSigmoidBce, 7, 99);
    REQUIRE(sw.step == 0);
    REQUIRE(sw.config.head == HeadKind::kSigmoidBce);
    REQUIRE(sw.config.n_out == 7);
    for (const auto& [name, e] : ck.params.items) {
      if (name == "head.w" || name == "head.b") continue;
      REQUIRE(sw.params.at(name).vec() == e.value.vec());
    }
    REQUIRE(sw.params.at("head.w").shape() ==
            std::vector<int64_t>{cfg.embedding_dim(), 7});
    REQUIRE(sw.params.at("head.b").numel() == 7);
    for (int64_t i = 0; i < 7; ++i) REQUIRE(sw.params.at("head.b")[i] == 0.0f);
  }

  SECTION("double swap restores the original head shape") {
    auto sw = swap_head(ck, HeadKind::kSigmoidBce, 7, 99);
    auto back = swap_head(sw, HeadKind::kSoftmaxCe, 3, 5);
    REQUIRE(back.params.at("head.w").shape() == ck.params.at("head.w").shape());
  }

  SECTION("body fingerprint erases head identity") {
    ModelConfig other = cfg;
    other.head = HeadKind::kSigmoidBce;
    other.n_out = 12;
    REQUIRE(body_fingerprint(other) == body_fingerprint(cfg));
    REQUIRE(model_fingerprint(other) != model_fingerprint(cfg));
    other.encoder.widths = {4, 8, 12, 32};
    REQUIRE(body_fingerprint(other) != body_fingerprint(cfg));
  }

  SECTION("compatibility check names real mismatches") {
    check_body_compatible(ck, cfg);  // fine
    ModelConfig other = cfg;
    other.encoder.depths = {1, 1, 1, 1};
    REQUIRE_THROWS_AS(check_body_compatible(ck, other), TrainError);
  }
}
