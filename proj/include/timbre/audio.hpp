// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "timbre/common.hpp"
#include "timbre/wav.hpp"

namespace timbre {

// Mono sample sequence; the universal audio currency of the toolkit.
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;

  int64_t size() const { return int64_t(samples.size()); }
  double duration_s() const { return sample_rate ? double(size()) / sample_rate : 0.0; }
};

inline double rms(const float* x, int64_t n) {
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += double(x[i]) * double(x[i]);
  return n ? std::sqrt(acc / double(n)) : 0.0;
}
inline double rms(const Waveform& w) { return rms(w.samples.data(), w.size()); }

inline double peak(const Waveform& w) {
  double m = 0.0;
  for (float v : w.samples) m = std::max(m, double(std::fabs(v)));
  return m;
}

// Load a WAV file as mono. Stereo is downmixed by the per-sample mean of the
// two channels.
inline Waveform load_wav(const std::string& path) {
  WavData d = read_wav(path);
  Waveform w;
  w.sample_rate = d.sample_rate;
  const int64_t n = d.frames();
  w.samples.resize(size_t(n));
  if (d.channels == 1) {
    std::copy(d.samples.begin(), d.samples.end(), w.samples.begin());
  } else {
    for (int64_t i = 0; i < n; ++i)
      w.samples[size_t(i)] = 0.5f * (d.samples[size_t(2 * i)] + d.samples[size_t(2 * i + 1)]);
  }
  return w;
}

inline void save_wav(const std::string& path, const Waveform& w,
                     WavFormat format = WavFormat::kPcm16) {
  write_wav(path, w.samples, w.sample_rate, 1, format);
}

namespace detail {

// Modified Bessel function of the first kind, order zero (series expansion).
inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  double half_x = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half_x / k) * (half_x / k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

inline double sinc_pi(double x) {
  if (std::fabs(x) < 1e-12) return 1.0;
  double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace detail

// Band-limited resampler: windowed sinc, Kaiser window beta 8.6, 64
// zero-crossings at the cutoff. Output length is round(len * target/source).
inline Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (target_rate == w.sample_rate) return w;

  const double ratio = double(target_rate) / double(w.sample_rate);
  const double cutoff = std::min(1.0, ratio);  // fraction of source Nyquist
  const int zeros = 64;
  const double beta = 8.6;
  const double half_width = zeros / cutoff;  // in source samples
  const double i0_beta = detail::bessel_i0(beta);

  const int64_t in_len = w.size();
  const int64_t out_len = int64_t(std::llround(double(in_len) * ratio));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(size_t(out_len));

  for (int64_t n = 0; n < out_len; ++n) {
    const double t = double(n) / ratio;  // position in source samples
    const int64_t m_lo = std::max<int64_t>(0, int64_t(std::ceil(t - half_width)));
    const int64_t m_hi = std::min<int64_t>(in_len - 1, int64_t(std::floor(t + half_width)));
    double acc = 0.0;
    for (int64_t m = m_lo; m <= m_hi; ++m) {
      const double d = t - double(m);
      const double u = d * cutoff / zeros;  // window argument in [-1, 1]
      const double win = detail::bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - u * u))) / i0_beta;
      acc += double(w.samples[size_t(m)]) * cutoff * detail::sinc_pi(cutoff * d) * win;
    }
    out.samples[size_t(n)] = float(acc);
  }
  return out;
}

// Exactly one second of audio: crop, or zero-pad at the tail.
inline Waveform first_second(const Waveform& w) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(size_t(w.sample_rate), 0.0f);
  const int64_t n = std::min<int64_t>(w.size(), w.sample_rate);
  std::copy(w.samples.begin(), w.samples.begin() + n, out.samples.begin());
  return out;
}

}  // namespace timbre
