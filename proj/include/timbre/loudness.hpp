// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "timbre/audio.hpp"
#include "timbre/common.hpp"

namespace timbre {

// Integrated loudness per ITU-R BS.1770-4: K-weighting (high-shelf + high-pass
// biquads), 400 ms gating blocks with 75% overlap, -70 LUFS absolute gate,
// -10 LU relative gate.

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  void process(const float* in, double* out, int64_t n) const {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (int64_t i = 0; i < n; ++i) {
      double x0 = double(in[i]);
      double y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x0;
      y2 = y1;
      y1 = y0;
      out[i] = y0;
    }
  }
  void process_inplace(double* x, int64_t n) const {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (int64_t i = 0; i < n; ++i) {
      double x0 = x[i];
      double y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x0;
      y2 = y1;
      y1 = y0;
      x[i] = y0;
    }
  }
  // Poles strictly inside the unit circle.
  bool stable() const { return std::fabs(a2) < 1.0 && std::fabs(a1) < 1.0 + a2; }
};

namespace detail {

// Bilinear transform of the analog shelving prototype; the 0.499666774155
// band-gain exponent makes the 48 kHz result match the published reference
// coefficients to full precision.
inline Biquad high_shelf(double gain_db, double q, double fc, double fs) {
  const double k = std::tan(M_PI * fc / fs);
  const double vh = std::pow(10.0, gain_db / 20.0);
  const double vb = std::pow(vh, 0.499666774155);
  const double a0 = 1.0 + k / q + k * k;
  Biquad f;
  f.b0 = (vh + vb * k / q + k * k) / a0;
  f.b1 = 2.0 * (k * k - vh) / a0;
  f.b2 = (vh - vb * k / q + k * k) / a0;
  f.a1 = 2.0 * (k * k - 1.0) / a0;
  f.a2 = (1.0 - k / q + k * k) / a0;
  return f;
}

inline Biquad high_pass(double q, double fc, double fs) {
  const double k = std::tan(M_PI * fc / fs);
  const double a0 = 1.0 + k / q + k * k;
  Biquad f;
  f.b0 = 1.0;
  f.b1 = -2.0;
  f.b2 = 1.0;
  f.a1 = 2.0 * (k * k - 1.0) / a0;
  f.a2 = (1.0 - k / q + k * k) / a0;
  return f;
}

}  // namespace detail

// The two K-weighting stages, recomputed for an arbitrary sample rate from the
// analog prototypes behind the 48 kHz reference coefficients.
inline std::pair<Biquad, Biquad> k_weighting(double fs) {
  Biquad shelf = detail::high_shelf(3.999843853973347, 0.7071752369554196, 1681.974450955533, fs);
  Biquad hp = detail::high_pass(0.5003270373238773, 38.13547087602444, fs);
  return {shelf, hp};
}

// Integrated loudness in LUFS; -inf when every block is gated out.
inline double measure_lufs(const Waveform& w) {
  const int64_t block = int64_t(std::llround(0.400 * w.sample_rate));
  const int64_t hop = int64_t(std::llround(0.100 * w.sample_rate));
  if (w.size() < block) throw ConfigError("measure_lufs: input shorter than one 400 ms block");

  std::vector<double> y(size_t(w.size()));
  auto [shelf, hp] = k_weighting(double(w.sample_rate));
  shelf.process(w.samples.data(), y.data(), w.size());
  hp.process_inplace(y.data(), w.size());

  // Mean square per 400 ms block, 75% overlap; trailing partial block dropped.
  std::vector<double> powers;
  for (int64_t start = 0; start + block <= w.size(); start += hop) {
    double acc = 0.0;
    for (int64_t i = start; i < start + block; ++i) acc += y[size_t(i)] * y[size_t(i)];
    powers.push_back(acc / double(block));
  }

  auto block_loudness = [](double p) { return -0.691 + 10.0 * std::log10(p); };

  // Absolute gate at -70 LUFS.
  double sum = 0.0;
  int64_t count = 0;
  for (double p : powers)
    if (p > 0.0 && block_loudness(p) > -70.0) {
      sum += p;
      ++count;
    }
  if (count == 0) return kNegInfLoudness;

  // Relative gate 10 LU below the loudness of the absolutely-gated mean.
  const double rel_threshold = block_loudness(sum / double(count)) - 10.0;
  sum = 0.0;
  count = 0;
  for (double p : powers)
    if (p > 0.0 && block_loudness(p) > -70.0 && block_loudness(p) > rel_threshold) {
      sum += p;
      ++count;
    }
  if (count == 0) return kNegInfLoudness;
  return block_loudness(sum / double(count));
}

struct NormalizeResult {
  Waveform audio;
  double gain = 1.0;
  bool clipped = false;
};

// Scale by a single gain so integrated loudness hits `target_lufs`; hard-clip
// to [-1, 1] afterwards and flag if that happened.
inline NormalizeResult normalize_lufs(const Waveform& w, double target_lufs) {
  const double measured = measure_lufs(w);
  if (!std::isfinite(measured))
    throw FormatError("normalize_lufs: cannot normalize silent input");
  NormalizeResult r;
  r.gain = db_to_gain(target_lufs - measured);
  r.audio.sample_rate = w.sample_rate;
  r.audio.samples.resize(w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) {
    double v = double(w.samples[i]) * r.gain;
    if (v > 1.0 || v < -1.0) {
      r.clipped = true;
      v = std::clamp(v, -1.0, 1.0);
    }
    r.audio.samples[i] = float(v);
  }
  return r;
}

}  // namespace timbre
