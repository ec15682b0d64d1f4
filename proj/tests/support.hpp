// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "timbre/audio.hpp"

namespace testsup {

// Unique scratch directory, removed on destruction.
class TmpDir {
 public:
  explicit TmpDir(const std::string& tag) {
    namespace fs = std::filesystem;
    auto base = fs::temp_directory_path();
    std::random_device rd;
    for (int i = 0; i < 64; ++i) {
      fs::path p = base / (tag + "_" + std::to_string(rd()));
      std::error_code ec;
      if (fs::create_directories(p, ec)) {
        path_ = p;
        return;
      }
    }
    throw std::runtime_error("cannot create temp dir");
  }
  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TmpDir(const TmpDir&) = delete;
  TmpDir& operator=(const TmpDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Radix-2 Cooley-Tukey, reference implementation for spectral oracles.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n < 2) return;
  if ((n & (n - 1)) != 0) throw std::runtime_error("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Magnitude spectrum of a real signal zero-padded to n_fft.
inline std::vector<double> spectrum(const std::vector<float>& x, size_t n_fft) {
  std::vector<std::complex<double>> a(n_fft);
  for (size_t i = 0; i < x.size() && i < n_fft; ++i) a[i] = double(x[i]);
  fft_inplace(a);
  std::vector<double> mag(n_fft / 2 + 1);
  for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(a[i]);
  return mag;
}

// Peak bin -> frequency in Hz.
inline double dominant_hz(const std::vector<float>& x, int sample_rate, size_t n_fft = 16384) {
  auto mag = spectrum(x, n_fft);
  size_t best = 1;
  for (size_t i = 1; i < mag.size(); ++i)
    if (mag[i] > mag[best]) best = i;
  return double(best) * double(sample_rate) / double(n_fft);
}

// Band energy ratio: sum |X| in [lo, hi] over total (skipping DC).
inline double band_energy_ratio(const std::vector<float>& x, int sample_rate, double lo,
                                double hi, size_t n_fft = 16384) {
  auto mag = spectrum(x, n_fft);
  double in = 0, total = 0;
  for (size_t i = 1; i < mag.size(); ++i) {
    const double f = double(i) * double(sample_rate) / double(n_fft);
    const double p = mag[i] * mag[i];
    total += p;
    if (f >= lo && f <= hi) in += p;
  }
  return total > 0 ? in / total : 0.0;
}

inline timbre::Waveform sine(double hz, double seconds, int sample_rate, float amp = 0.5f) {
  timbre::Waveform w;
  w.sample_rate = sample_rate;
  const int64_t n = int64_t(seconds * sample_rate);
  w.samples.resize(size_t(n));
  for (int64_t i = 0; i < n; ++i)
    w.samples[size_t(i)] =
        amp * float(std::sin(2.0 * 3.14159265358979323846 * hz * double(i) / sample_rate));
  return w;
}

}  // namespace testsup
