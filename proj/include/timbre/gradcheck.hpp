// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "timbre/graph.hpp"
#include "timbre/model.hpp"

namespace timbre {

struct GradCheckResult {
  std::string name;
  double max_abs_diff = 0;
  double max_rel_diff = 0;
  bool pass = true;
};

namespace detail {

// Central differences in double precision against the tape's reverse sweep.
// `build` must construct the graph from the given leaf ids and return a
// scalar node.
inline GradCheckResult run_grad_check(
    const std::string& name, const std::vector<Tensor<double>>& inputs,
    const std::function<typename Graph<double>::Id(Graph<double>&,
                                                   const std::vector<typename Graph<double>::Id>&)>& build,
    double eps = 1e-5, double tol_abs = 5e-7, double tol_rel = 1e-4) {
  GradCheckResult res;
  res.name = name;

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Graph<double> g;
    std::vector<typename Graph<double>::Id> ids;
    for (const auto& v : vals) ids.push_back(g.value(v, /*needs_grad=*/false));
    auto out = build(g, ids);
    return g.val(out)[0];
  };

  // analytic gradients
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<typename Graph<double>::Id> ids;
    for (const auto& v : inputs) ids.push_back(g.value(v, /*needs_grad=*/true));
    auto out = build(g, ids);
    g.backward(out);
    for (auto id : ids)
      analytic.push_back(g.has_grad(id) ? g.grad(id) : Tensor<double>(g.val(id).shape()));
  }

  std::vector<Tensor<double>> work = inputs;
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (int64_t i = 0; i < inputs[t].numel(); ++i) {
      const double orig = work[t][i];
      work[t][i] = orig + eps;
      const double fp = eval(work);
      work[t][i] = orig - eps;
      const double fm = eval(work);
      work[t][i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic[t][i];
      const double abs_diff = std::abs(a - numeric);
      const double rel_diff = abs_diff / std::max({std::abs(a), std::abs(numeric), 1e-8});
      res.max_abs_diff = std::max(res.max_abs_diff, abs_diff);
      res.max_rel_diff = std::max(res.max_rel_diff, rel_diff);
      if (abs_diff > tol_abs && rel_diff > tol_rel) res.pass = false;
    }
  }
  return res;
}

inline Tensor<double> random_tensor(const std::vector<int64_t>& shape, Rng& rng,
                                    double scale = 1.0) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline Tensor<double> fixed_projection(const std::vector<int64_t>& shape, Rng& rng) {
  return random_tensor(shape, rng, 0.7);
}

}  // namespace detail

// Gradient checks for every differentiable building block plus a composed
// end-to-end micro model. Each case uses its own fixed seed so failures
// reproduce exactly.
inline std::vector<GradCheckResult> run_all_grad_checks() {
  using G = Graph<double>;
  using Id = typename G::Id;
  std::vector<GradCheckResult> out;
  auto add = [&](GradCheckResult r) { out.push_back(std::move(r)); };

  {
    Rng rng(11);
    auto x = detail::random_tensor({2, 5}, rng);
    // keep away from the relu kink so central differences stay clean
    for (int64_t i = 0; i < x.numel(); ++i)
      if (std::abs(x[i]) < 0.1) x[i] += x[i] < 0 ? -0.2 : 0.2;
    auto p = detail::fixed_projection({2, 5}, rng);
    add(detail::run_grad_check("relu", {x}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.relu(in[0]), p);
    }));
    add(detail::run_grad_check("leaky_relu", {x}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.leaky_relu(in[0], 0.2), p);
    }));
    add(detail::run_grad_check("abs", {x}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.abs_op(in[0]), p);
    }));
  }
  {
    Rng rng(12);
    auto x = detail::random_tensor({3, 4}, rng, 0.5);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::abs(x[i]) + 0.3;
    auto p = detail::fixed_projection({3, 4}, rng);
    add(detail::run_grad_check("log1p", {x}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.log1p_op(in[0]), p);
    }));
  }
  {
    Rng rng(13);
    auto a = detail::random_tensor({2, 3}, rng);
    auto b = detail::random_tensor({2, 3}, rng);
    auto p = detail::fixed_projection({2, 3}, rng);
    add(detail::run_grad_check("add", {a, b}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.add(in[0], in[1]), p);
    }));
    auto p2 = detail::fixed_projection({6}, rng);
    add(detail::run_grad_check("reshape", {a}, [p2](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.reshape(in[0], {6}), p2);
    }));
  }
  {
    Rng rng(14);
    auto x = detail::random_tensor({3, 4}, rng);
    auto w = detail::random_tensor({4, 2}, rng);
    auto b = detail::random_tensor({2}, rng);
    auto p = detail::fixed_projection({3, 2}, rng);
    add(detail::run_grad_check("affine", {x, w, b}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.affine(in[0], in[1], in[2]), p);
    }));
  }
  {
    Rng rng(15);
    auto x = detail::random_tensor({2, 2, 12}, rng);
    auto w = detail::random_tensor({3, 2, 5}, rng, 0.5);
    auto p = detail::fixed_projection({2, 3, 6}, rng);
    add(detail::run_grad_check("conv1d", {x, w}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.conv1d(in[0], in[1], /*stride=*/2, /*pad=*/2), p);
    }));
  }
  {
    Rng rng(16);
    auto x = detail::random_tensor({2, 2, 5, 6}, rng);
    auto w = detail::random_tensor({3, 2, 3, 3}, rng, 0.5);
    auto p = detail::fixed_projection({2, 3, 3, 3}, rng);
    add(detail::run_grad_check("conv2d", {x, w}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.conv2d(in[0], in[1], /*stride=*/2, /*pad=*/1), p);
    }));
    auto w1 = detail::random_tensor({4, 2, 1, 1}, rng, 0.5);
    auto p1 = detail::fixed_projection({2, 4, 3, 3}, rng);
    add(detail::run_grad_check("conv2d_1x1_s2", {x, w1}, [p1](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.conv2d(in[0], in[1], /*stride=*/2, /*pad=*/0), p1);
    }));
  }
  {
    Rng rng(17);
    auto x = detail::random_tensor({2, 3, 13}, rng);
    auto p = detail::fixed_projection({2, 3, 5}, rng);
    add(detail::run_grad_check("avg_pool1d", {x}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.avg_pool1d(in[0], /*win=*/4, /*hop=*/2), p);
    }));
  }
  {
    Rng rng(18);
    auto x = detail::random_tensor({2, 3, 4, 5}, rng);
    auto p = detail::fixed_projection({2, 3, 5}, rng);
    add(detail::run_grad_check("mean_freq", {x}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.mean_freq(in[0]), p);
    }));
  }
  {
    Rng rng(19);
    auto x = detail::random_tensor({3, 2, 4, 5}, rng);
    auto gamma = detail::random_tensor({2}, rng, 0.3);
    for (int64_t i = 0; i < gamma.numel(); ++i) gamma[i] += 1.0;
    auto beta = detail::random_tensor({2}, rng, 0.3);
    auto p = detail::fixed_projection({3, 2, 4, 5}, rng);
    add(detail::run_grad_check(
        "batchnorm_train", {x, gamma, beta},
        [p](G& g, const std::vector<Id>& in) {
          Tensor<double> rm({2}), rv({2});
          for (int64_t i = 0; i < 2; ++i) rv[i] = 1.0;
          return g.weighted_sum(
              g.batchnorm(in[0], in[1], in[2], &rm, &rv, /*training=*/true), p);
        },
        1e-5, 5e-7, 5e-4));
  }
  {
    Rng rng(20);
    auto x = detail::random_tensor({2, 3, 6}, rng);
    auto mu = detail::random_tensor({4, 3}, rng);
    auto s = detail::random_tensor({4}, rng, 0.5);
    auto p = detail::fixed_projection({2, 12}, rng);
    add(detail::run_grad_check("lde", {x, mu, s}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.lde(in[0], in[1], in[2]), p);
    }));
  }
  {
    Rng rng(21);
    auto x = detail::random_tensor({3, 5}, rng);
    auto p = detail::fixed_projection({3, 5}, rng);
    add(detail::run_grad_check("l2norm_rows", {x}, [p](G& g, const std::vector<Id>& in) {
      return g.weighted_sum(g.l2norm_rows(in[0]), p);
    }));
  }
  {
    Rng rng(22);
    auto z = detail::random_tensor({3, 4}, rng);
    Tensor<double> t({3, 4});
    t.at(0, 1) = 1;
    t.at(1, 3) = 1;
    t.at(2, 0) = 1;
    add(detail::run_grad_check("softmax_ce_smooth", {z}, [t](G& g, const std::vector<Id>& in) {
      return g.softmax_ce(in[0], t, 0.1);
    }));
    Tensor<double> y({3, 4});
    y.at(0, 0) = 1;
    y.at(0, 2) = 1;
    y.at(2, 3) = 1;
    add(detail::run_grad_check("sigmoid_bce", {z}, [y](G& g, const std::vector<Id>& in) {
      return g.sigmoid_bce(in[0], y);
    }));
  }
  {
    Rng rng(23);
    Tensor<double> low({3}), band({3});
    for (int64_t i = 0; i < 3; ++i) {
      low[i] = 300.0 + 900.0 * double(i) + 40.0 * rng.normal();
      band[i] = 250.0 + 60.0 * rng.normal();
    }
    auto p = detail::fixed_projection({3, 1, 17}, rng);
    add(detail::run_grad_check(
        "sinc_kernels", {low, band},
        [p](G& g, const std::vector<Id>& in) {
          return g.weighted_sum(g.sinc_kernels(in[0], in[1], 17, 16000, 30.0, 50.0), p);
        },
        1e-4, 5e-7, 5e-4));
  }
  {
    // composed micro model: learnable band-pass bank through pooling,
    // normalization, clustering and the classifier head in one tape
    Rng rng(24);
    Tensor<double> low({2}), band({2});
    low[0] = 400;
    low[1] = 1800;
    band[0] = 300;
    band[1] = 500;
    auto wave = detail::random_tensor({2, 64}, rng, 0.4);
    auto mu = detail::random_tensor({2, 2}, rng);
    auto s = detail::random_tensor({2}, rng, 0.3);
    auto hw = detail::random_tensor({4, 3}, rng, 0.5);
    auto hb = detail::random_tensor({3}, rng, 0.1);
    Tensor<double> t({2, 3});
    t.at(0, 1) = 1;
    t.at(1, 2) = 1;
    add(detail::run_grad_check(
        "composed_path", {low, band, wave, mu, s, hw, hb},
        [t](G& g, const std::vector<Id>& in) {
          auto k = g.sinc_kernels(in[0], in[1], 9, 16000, 30.0, 50.0);
          auto x = g.reshape(in[2], {2, 1, 64});
          auto c = g.conv1d(x, k, /*stride=*/2, /*pad=*/4);       // [2,2,32]
          auto a = g.log1p_op(g.abs_op(c));
          auto pl = g.avg_pool1d(a, /*win=*/4, /*hop=*/4);        // [2,2,8]
          auto e = g.lde(pl, in[3], in[4]);                       // [2,4]
          auto n = g.l2norm_rows(e);
          auto logits = g.affine(n, in[5], in[6]);                // [2,3]
          return g.softmax_ce(logits, t, 0.05);
        },
        1e-4, 1e-6, 2e-3));
  }
  return out;
}

}  // namespace timbre
