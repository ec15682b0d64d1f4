// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "timbre/audio.hpp"
#include "timbre/common.hpp"
#include "timbre/loudness.hpp"

namespace timbre {

struct MixRatio {
  double lambda = 0.5;
  double alpha = 0.3;
};

struct SoftLabel {
  std::vector<float> weights;
};

struct Range {
  double lo = 0, hi = 0;
  bool valid() const { return hi >= lo; }
};

struct EffectConfig {
  double chain_probability = 0.3;
  double toggle_probability = 0.5;       // per-effect coin once the chain fires
  Range noise_snr_db{20.0, 40.0};
  Range delay_ms{50.0, 300.0};
  Range delay_attenuation{0.3, 0.7};
  Range reverb_decay{0.3, 0.8};
  Range gain_db{-6.0, 6.0};
  Range pitch_semitones{-2.0, 2.0};
  Range highpass_hz{30.0, 400.0};        // sampled log-uniform
  Range lowpass_hz{2000.0, 7500.0};      // sampled log-uniform

  void validate(int sample_rate) const {
    const double nyq = sample_rate / 2.0;
    auto check = [](bool ok, const char* what) {
      if (!ok) throw ConfigError(std::string("EffectConfig: bad ") + what);
    };
    check(chain_probability >= 0 && chain_probability <= 1, "chain_probability");
    check(toggle_probability >= 0 && toggle_probability <= 1, "toggle_probability");
    check(noise_snr_db.valid(), "noise_snr_db range");
    check(delay_ms.valid() && delay_ms.lo > 0, "delay_ms range");
    check(delay_attenuation.valid() && delay_attenuation.lo >= 0 && delay_attenuation.hi <= 1,
          "delay_attenuation range");
    check(reverb_decay.valid() && reverb_decay.lo > 0 && reverb_decay.hi < 1,
          "reverb_decay range");
    check(gain_db.valid(), "gain_db range");
    check(pitch_semitones.valid() && std::fabs(pitch_semitones.lo) <= 12 &&
              std::fabs(pitch_semitones.hi) <= 12,
          "pitch_semitones range");
    check(highpass_hz.valid() && highpass_hz.lo > 0 && highpass_hz.hi < nyq, "highpass_hz range");
    check(lowpass_hz.valid() && lowpass_hz.lo > 0 && lowpass_hz.hi < nyq, "lowpass_hz range");
  }
};

// ---------------------------------------------------------------------------
// Concatenation

namespace detail {

// Drop leading/trailing 20 ms frames whose RMS falls below the gate.
inline std::pair<size_t, size_t> trim_bounds(const std::vector<float>& x, int sample_rate,
                                             double gate_rms = 1e-3) {
  const size_t flen = size_t(std::max<int64_t>(1, int64_t(std::llround(0.02 * sample_rate))));
  const size_t n_frames = (x.size() + flen - 1) / flen;
  auto frame_rms = [&](size_t f) {
    const size_t b = f * flen, e = std::min(x.size(), b + flen);
    double acc = 0;
    for (size_t i = b; i < e; ++i) acc += double(x[i]) * x[i];
    return e > b ? std::sqrt(acc / double(e - b)) : 0.0;
  };
  size_t first = n_frames, last = 0;
  for (size_t f = 0; f < n_frames; ++f) {
    if (frame_rms(f) >= gate_rms) {
      if (first == n_frames) first = f;
      last = f;
    }
  }
  if (first == n_frames) return {0, 0};  // all silent
  return {first * flen, std::min(x.size(), (last + 1) * flen)};
}

}  // namespace detail

// Concatenate same-class takes: silence-trim each part, join with a 10 ms
// linear crossfade, then crop or zero-pad to the requested duration.
inline Waveform concat_same_class(const std::vector<Waveform>& parts, double target_len_s) {
  if (parts.empty()) throw ConfigError("concat_same_class: empty parts list");
  const int sr = parts[0].sample_rate;
  for (const auto& p : parts)
    if (p.sample_rate != sr) throw ConfigError("concat_same_class: sample rate mismatch");

  const size_t xfade = size_t(std::llround(0.010 * sr));
  std::vector<float> acc;
  for (const auto& p : parts) {
    auto [b, e] = detail::trim_bounds(p.samples, sr);
    if (e <= b) continue;
    if (acc.empty()) {
      acc.assign(p.samples.begin() + std::ptrdiff_t(b), p.samples.begin() + std::ptrdiff_t(e));
      continue;
    }
    const size_t part_len = e - b;
    const size_t n_x = std::min({xfade, acc.size(), part_len});
    const size_t join = acc.size() - n_x;
    acc.resize(join + part_len);
    for (size_t i = 0; i < n_x; ++i) {
      const float t = n_x > 1 ? float(i) / float(n_x - 1) : 1.0f;
      acc[join + i] = acc[join + i] * (1.0f - t) + p.samples[b + i] * t;
    }
    for (size_t i = n_x; i < part_len; ++i) acc[join + i] = p.samples[b + i];
  }

  const size_t target = size_t(std::llround(target_len_s * sr));
  acc.resize(target, 0.0f);
  Waveform out;
  out.sample_rate = sr;
  out.samples = std::move(acc);
  return out;
}

// ---------------------------------------------------------------------------
// Mixup

inline MixRatio sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0)) throw ConfigError("sample_lambda: alpha must be positive");
  MixRatio r;
  r.alpha = alpha;
  r.lambda = rng.beta(alpha, alpha);
  return r;
}

inline std::pair<Waveform, SoftLabel> mixup(const Waveform& x_i, const SoftLabel& y_i,
                                            const Waveform& x_j, const SoftLabel& y_j,
                                            double lambda) {
  if (x_i.samples.size() != x_j.samples.size() || x_i.sample_rate != x_j.sample_rate)
    throw ConfigError("mixup: waveform shape mismatch");
  if (y_i.weights.size() != y_j.weights.size()) throw ConfigError("mixup: label size mismatch");
  const float l = float(lambda), m = 1.0f - float(lambda);
  Waveform x;
  x.sample_rate = x_i.sample_rate;
  x.samples.resize(x_i.samples.size());
  for (size_t k = 0; k < x.samples.size(); ++k)
    x.samples[k] = l * x_i.samples[k] + m * x_j.samples[k];
  SoftLabel y;
  y.weights.resize(y_i.weights.size());
  for (size_t k = 0; k < y.weights.size(); ++k)
    y.weights[k] = l * y_i.weights[k] + m * y_j.weights[k];
  return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------------------
// Effects

inline Waveform pitch_shift(const Waveform& w, double semitones) {
  if (std::fabs(semitones) > 12.0) throw ConfigError("pitch_shift: |semitones| must be <= 12");
  const double ratio = std::pow(2.0, semitones / 12.0);
  const int inter_rate = int(std::llround(w.sample_rate / ratio));
  Waveform shifted = resample(w, inter_rate);
  shifted.sample_rate = w.sample_rate;  // reinterpret: duration change becomes pitch change
  shifted.samples.resize(w.samples.size(), 0.0f);
  return shifted;
}

namespace detail {

inline Biquad rbj_low_pass(double q, double fc, double fs) {
  const double w0 = 2.0 * M_PI * fc / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1 + alpha;
  Biquad b;
  b.b0 = (1 - cw) / 2 / a0;
  b.b1 = (1 - cw) / a0;
  b.b2 = (1 - cw) / 2 / a0;
  b.a1 = -2 * cw / a0;
  b.a2 = (1 - alpha) / a0;
  return b;
}

inline void biquad_inplace(std::vector<float>& x, const Biquad& bq) {
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (float& v : x) {
    const double x0 = v;
    const double y0 = bq.b0 * x0 + bq.b1 * x1 + bq.b2 * x2 - bq.a1 * y1 - bq.a2 * y2;
    x2 = x1;
    x1 = x0;
    y2 = y1;
    y1 = y0;
    v = float(y0);
  }
}

}  // namespace detail

inline Waveform highpass(const Waveform& w, double cutoff_hz, double q = M_SQRT1_2) {
  Waveform out = w;
  detail::biquad_inplace(out.samples, detail::high_pass(q, cutoff_hz, w.sample_rate));
  return out;
}

inline Waveform lowpass(const Waveform& w, double cutoff_hz, double q = M_SQRT1_2) {
  Waveform out = w;
  detail::biquad_inplace(out.samples, detail::rbj_low_pass(q, cutoff_hz, w.sample_rate));
  return out;
}

// Single feedforward echo.
inline Waveform delay_echo(const Waveform& w, double delay_ms, double attenuation) {
  Waveform out = w;
  const int64_t d = std::llround(delay_ms * 1e-3 * w.sample_rate);
  for (int64_t i = d; i < int64_t(out.samples.size()); ++i)
    out.samples[size_t(i)] += float(attenuation) * w.samples[size_t(i - d)];
  return out;
}

// Schroeder reverberator: four parallel feedback combs into two series
// allpasses. Comb wet level scales with the decay parameter so decay→0
// degenerates to the dry path.
inline Waveform reverb(const Waveform& w, double decay) {
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("reverb: decay must be in (0, 1)");
  static constexpr double kCombMs[4] = {29.7, 37.1, 41.1, 43.7};
  static constexpr double kAllpassMs[2] = {5.0, 1.7};
  const size_t n = w.samples.size();
  std::vector<double> wet(n, 0.0);

  for (double ms : kCombMs) {
    const size_t d = size_t(std::max<int64_t>(1, std::llround(ms * 1e-3 * w.sample_rate)));
    std::vector<double> y(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      const double delayed_in = i >= d ? double(w.samples[i - d]) : 0.0;
      const double delayed_out = i >= d ? y[i - d] : 0.0;
      y[i] = decay * (delayed_in + delayed_out);
    }
    for (size_t i = 0; i < n; ++i) wet[i] += 0.25 * y[i];
  }

  for (double ms : kAllpassMs) {
    const size_t d = size_t(std::max<int64_t>(1, std::llround(ms * 1e-3 * w.sample_rate)));
    const double g = 0.5;
    std::vector<double> y(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      const double delayed_in = i >= d ? wet[i - d] : 0.0;
      const double delayed_out = i >= d ? y[i - d] : 0.0;
      y[i] = -g * wet[i] + delayed_in + g * delayed_out;
    }
    wet.swap(y);
  }

  Waveform out = w;
  for (size_t i = 0; i < n; ++i) out.samples[i] = float(0.7 * double(w.samples[i]) + 0.3 * wet[i]);
  return out;
}

inline Waveform add_noise_snr(const Waveform& w, double snr_db, Rng& rng) {
  const double sig_rms = rms(w);
  if (sig_rms <= 0) return w;
  const double noise_rms = sig_rms / db_to_gain(snr_db);
  Waveform out = w;
  for (float& v : out.samples) v += float(noise_rms * rng.normal());
  return out;
}

// One sampled instantiation of the chain. Toggles default to off, so a
// default-constructed draw applies the identity.
struct EffectDraw {
  bool pitch = false, highpass = false, lowpass = false, delay = false, reverb = false,
       gain = false, noise = false;
  double pitch_semitones = 0, highpass_hz = 100, lowpass_hz = 4000;
  double delay_ms = 100, delay_attenuation = 0.5;
  double reverb_decay = 0.5;
  double gain_db = 0;
  double noise_snr_db = 30;
};

inline EffectDraw sample_effect_draw(const EffectConfig& cfg, Rng& rng) {
  EffectDraw d;
  const double p = cfg.toggle_probability;
  d.pitch = rng.bernoulli(p);
  if (d.pitch) d.pitch_semitones = rng.uniform(cfg.pitch_semitones.lo, cfg.pitch_semitones.hi);
  d.highpass = rng.bernoulli(p);
  if (d.highpass) d.highpass_hz = rng.log_uniform(cfg.highpass_hz.lo, cfg.highpass_hz.hi);
  d.lowpass = rng.bernoulli(p);
  if (d.lowpass) d.lowpass_hz = rng.log_uniform(cfg.lowpass_hz.lo, cfg.lowpass_hz.hi);
  d.delay = rng.bernoulli(p);
  if (d.delay) {
    d.delay_ms = rng.uniform(cfg.delay_ms.lo, cfg.delay_ms.hi);
    d.delay_attenuation = rng.uniform(cfg.delay_attenuation.lo, cfg.delay_attenuation.hi);
  }
  d.reverb = rng.bernoulli(p);
  if (d.reverb) d.reverb_decay = rng.uniform(cfg.reverb_decay.lo, cfg.reverb_decay.hi);
  d.gain = rng.bernoulli(p);
  if (d.gain) d.gain_db = rng.uniform(cfg.gain_db.lo, cfg.gain_db.hi);
  d.noise = rng.bernoulli(p);
  if (d.noise) d.noise_snr_db = rng.uniform(cfg.noise_snr_db.lo, cfg.noise_snr_db.hi);
  return d;
}

// Apply a concrete draw in the fixed order
// pitch → high/low pass → delay → reverb → gain → noise, then clip.
inline Waveform apply_effects(const Waveform& w, const EffectDraw& d, Rng& rng) {
  Waveform x = w;
  if (d.pitch) x = pitch_shift(x, d.pitch_semitones);
  if (d.highpass) x = highpass(x, d.highpass_hz);
  if (d.lowpass) x = lowpass(x, d.lowpass_hz);
  if (d.delay) x = delay_echo(x, d.delay_ms, d.delay_attenuation);
  if (d.reverb) x = reverb(x, d.reverb_decay);
  if (d.gain) {
    const float g = float(db_to_gain(d.gain_db));
    for (float& v : x.samples) v *= g;
  }
  if (d.noise) x = add_noise_snr(x, d.noise_snr_db, rng);
  for (float& v : x.samples) v = std::clamp(v, -1.0f, 1.0f);
  return x;
}

inline Waveform effect_chain(const Waveform& w, const EffectConfig& cfg, Rng& rng) {
  cfg.validate(w.sample_rate);
  if (!rng.bernoulli(cfg.chain_probability)) return w;
  EffectDraw d = sample_effect_draw(cfg, rng);
  return apply_effects(w, d, rng);
}

}  // namespace timbre
