// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>

#include "timbre/common.hpp"
#include "timbre/model.hpp"
#include "timbre/tensor.hpp"

namespace timbre {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor<float>> m, v;
  int64_t t = 0;
};

// Classic Adam with bias correction; weight decay enters as an additive L2
// term on the gradient before the moment updates.
inline void adam_step(ParamStore& ps, const std::map<std::string, Tensor<float>>& grads,
                      AdamState& st, double lr, double weight_decay,
                      const AdamConfig& cfg = {}) {
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  for (auto& [name, entry] : ps.items) {
    if (!entry.trainable) continue;
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor<float>& g = git->second;
    Tensor<float>& theta = entry.value;
    if (g.numel() != theta.numel())
      throw TrainError("adam_step: gradient shape mismatch for " + name);
    if (!g.all_finite()) throw TrainError("non-finite gradient for parameter " + name);

    auto mit = st.m.find(name);
    if (mit == st.m.end()) {
      mit = st.m.emplace(name, Tensor<float>(theta.shape())).first;
      st.v.emplace(name, Tensor<float>(theta.shape()));
    }
    Tensor<float>& m = mit->second;
    Tensor<float>& v = st.v.at(name);
    for (int64_t i = 0; i < theta.numel(); ++i) {
      const double gi = double(g[i]) + weight_decay * double(theta[i]);
      const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = float(mi);
      v[i] = float(vi);
      theta[i] = float(double(theta[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps));
    }
  }
}

struct Schedule {
  double max_lr = 1e-3;
  int64_t warmup_steps = 0;
  int64_t total_steps = 1;

  void validate() const {
    if (!(max_lr > 0)) throw ConfigError("schedule: max_lr must be positive");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
      throw ConfigError("schedule: need 0 <= warmup < total");
  }
};

// Linear warmup from zero to max_lr, then cosine decay to zero.
inline double lr_at(int64_t step, const Schedule& s) {
  if (step < 0 || step > s.total_steps) throw ConfigError("lr_at: step out of range");
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return s.max_lr * double(step) / double(s.warmup_steps);
  const double progress =
      double(step - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
  return s.max_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace timbre
