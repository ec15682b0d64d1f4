// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace timbre {

// ---------------------------------------------------------------------------
// Error taxonomy. Exit-code mapping lives in the CLI: ConfigError -> 2,
// IoError/FormatError/UnsupportedError -> 3, TrainError -> 4.
// ---------------------------------------------------------------------------

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256++ with splitmix64 seeding, plus hand-rolled
// distribution transforms so streams do not depend on the standard library's
// unspecified distribution algorithms.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Hash a seed with a list of stream identifiers. Used to derive independent
// per-purpose / per-sample streams from one run seed.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> words) {
  uint64_t s = base ^ 0x5851f42d4c957f2dULL;
  for (uint64_t w : words) {
    s ^= w + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Log-uniform over [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  // Uniform integer in [0, n). n > 0.
  int64_t uniform_int(int64_t n) {
    // 128-bit multiply-shift; bias is negligible and the mapping is fixed.
    return int64_t((__uint128_t(next_u64()) * __uint128_t(n)) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Box-Muller on (0,1] uniforms.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  // Marsaglia-Tsang, with the shape+1 boost for shape < 1. Unit scale.
  double gamma(double shape) {
    if (shape < 1.0) {
      double g = gamma(shape + 1.0);
      double u = 1.0 - uniform();
      return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(n);
    for (int64_t i = 0; i < n; ++i) p[i] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(p[i], p[j]);
    }
    return p;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Worker pool sizing. TIMBRE_NUM_WORKERS caps parallelism; results are
// invariant to the worker count because work items only write disjoint
// outputs and reductions happen in fixed index order on the caller side.
// ---------------------------------------------------------------------------

inline int num_workers() {
  static const int n = [] {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("TIMBRE_NUM_WORKERS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v > 0 && v < 1024) hw = std::min(hw, int(v));
    }
    return hw;
  }();
  return n;
}

// f(begin, end) over [0, n) split into contiguous ranges.
template <typename F>
void parallel_for(int64_t n, F&& f) {
  int w = num_workers();
  if (n <= 0) return;
  if (w <= 1 || n == 1) {
    f(int64_t{0}, n);
    return;
  }
  w = int(std::min<int64_t>(w, n));
  std::vector<std::thread> threads;
  threads.reserve(w - 1);
  int64_t chunk = (n + w - 1) / w;
  for (int t = 1; t < w; ++t) {
    int64_t b = t * chunk;
    int64_t e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    threads.emplace_back([&f, b, e] { f(b, e); });
  }
  f(int64_t{0}, std::min<int64_t>(chunk, n));
  for (auto& th : threads) th.join();
}

// ---------------------------------------------------------------------------
// Small conversions
// ---------------------------------------------------------------------------

inline double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }
inline double gain_to_db(double g) { return 20.0 * std::log10(g); }

constexpr double kNegInfLoudness = -std::numeric_limits<double>::infinity();

}  // namespace timbre
