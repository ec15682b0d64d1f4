// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "timbre/common.hpp"
#include "timbre/tensor.hpp"

namespace timbre {

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order;
// backward() walks the tape in reverse, so construction order is the
// topological order. Templated on the scalar so gradient checks can run the
// whole net in double while training runs in float.
template <typename T>
class Graph {
 public:
  using Id = int32_t;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Id value(Tensor<T> v, bool needs_grad = false) {
    return emplace(std::move(v), needs_grad, nullptr);
  }

  const Tensor<T>& val(Id id) const { return nodes_[size_t(id)].val; }
  Tensor<T>& val(Id id) { return nodes_[size_t(id)].val; }

  // Gradient of a node; zero-allocated on first touch.
  Tensor<T>& grad(Id id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.numel() == 0) n.grad = Tensor<T>(n.val.shape());
    return n.grad;
  }
  bool has_grad(Id id) const { return nodes_[size_t(id)].grad.numel() > 0; }
  bool needs_grad(Id id) const { return nodes_[size_t(id)].needs_grad; }
  size_t size() const { return nodes_.size(); }

  void backward(Id loss) {
    if (val(loss).numel() != 1) throw TrainError("backward: loss must be a scalar");
    grad(loss).fill(T(1));
    for (int32_t i = loss; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.grad.numel() > 0 && n.back) n.back();
    }
  }

  // ---- elementwise -------------------------------------------------------

  Id relu(Id x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
    return emplace(std::move(y), needs_grad(x), [this, x](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& xv = val(x);
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < xv.numel(); ++i)
        if (xv[i] > T(0)) gx[i] += g[i];
    });
  }

  Id leaky_relu(Id x, T slope) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
    return emplace(std::move(y), needs_grad(x), [this, x, slope](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& xv = val(x);
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < xv.numel(); ++i) gx[i] += xv[i] > T(0) ? g[i] : slope * g[i];
    });
  }

  Id abs_op(Id x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = std::abs(xv[i]);
    return emplace(std::move(y), needs_grad(x), [this, x](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& xv = val(x);
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < xv.numel(); ++i) {
        if (xv[i] > T(0))
          gx[i] += g[i];
        else if (xv[i] < T(0))
          gx[i] -= g[i];
      }
    });
  }

  Id log1p_op(Id x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = std::log1p(xv[i]);
    return emplace(std::move(y), needs_grad(x), [this, x](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& xv = val(x);
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < xv.numel(); ++i) gx[i] += g[i] / (T(1) + xv[i]);
    });
  }

  Id add(Id a, Id b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv)) throw TrainError("add: shape mismatch");
    Tensor<T> y(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] + bv[i];
    return emplace(std::move(y), needs_grad(a) || needs_grad(b), [this, a, b](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      if (needs_grad(a)) {
        Tensor<T>& ga = grad(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (needs_grad(b)) {
        Tensor<T>& gb = grad(b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
      }
    });
  }

  Id reshape(Id x, std::vector<int64_t> shape) {
    Tensor<T> y = val(x).reshaped(std::move(shape));
    return emplace(std::move(y), needs_grad(x), [this, x](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
  }

  // Fixed-projection scalar reduction; the projection is a constant, which
  // gives gradient checks a generic scalar objective.
  Id weighted_sum(Id x, Tensor<T> weights) {
    const Tensor<T>& xv = val(x);
    if (weights.numel() != xv.numel()) throw TrainError("weighted_sum: size mismatch");
    T acc = 0;
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i] * weights[i];
    auto w = std::make_shared<Tensor<T>>(std::move(weights));
    return emplace(Tensor<T>::scalar(acc), needs_grad(x), [this, x, w](Id out) {
      const T g = nodes_[size_t(out)].grad[0];
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g * (*w)[i];
    });
  }

  // ---- dense -------------------------------------------------------------

  // y[N,M] = x[N,D] * w[D,M] + b[M]
  Id affine(Id x, Id w, Id b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) || bv.numel() != wv.dim(1))
      throw TrainError("affine: shape mismatch");
    const int64_t N = xv.dim(0), D = xv.dim(1), M = wv.dim(1);
    Tensor<T> y({N, M});
    as_matrix(y, N, M).noalias() = as_matrix(xv, N, D) * as_matrix(wv, D, M);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t m = 0; m < M; ++m) y.at(n, m) += bv[m];
    const bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
    return emplace(std::move(y), ng, [this, x, w, b, N, D, M](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      if (needs_grad(x))
        as_matrix(grad(x), N, D).noalias() +=
            as_matrix(g, N, M) * as_matrix(val(w), D, M).transpose();
      if (needs_grad(w))
        as_matrix(grad(w), D, M).noalias() +=
            as_matrix(val(x), N, D).transpose() * as_matrix(g, N, M);
      if (needs_grad(b)) {
        Tensor<T>& gb = grad(b);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t m = 0; m < M; ++m) gb[m] += g.at(n, m);
      }
    });
  }

  // ---- convolutions ------------------------------------------------------

  // x[N,Cin,L] (*) w[Cout,Cin,K], correlation (no kernel flip).
  Id conv1d(Id x, Id w, int64_t stride, int64_t pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(1) != wv.dim(1))
      throw TrainError("conv1d: shape mismatch");
    const int64_t N = xv.dim(0), Cin = xv.dim(1), L = xv.dim(2);
    const int64_t Cout = wv.dim(0), K = wv.dim(2);
    const int64_t Lout = (L + 2 * pad - K) / stride + 1;
    if (Lout <= 0) throw TrainError("conv1d: input shorter than kernel");

    Tensor<T> y({N, Cout, Lout});
    Tensor<T> col({Cin * K, Lout});
    for (int64_t n = 0; n < N; ++n) {
      im2col_1d(xv, n, K, stride, pad, Lout, col);
      as_matrix(y, Cout, Lout, n * Cout * Lout).noalias() =
          as_matrix(wv, Cout, Cin * K) * as_matrix(col, Cin * K, Lout);
    }
    const bool ng = needs_grad(x) || needs_grad(w);
    return emplace(std::move(y), ng, [this, x, w, stride, pad, N, Cin, L, Cout, K, Lout](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& xv = val(x);
      const Tensor<T>& wv = val(w);
      Tensor<T> col({Cin * K, Lout});
      for (int64_t n = 0; n < N; ++n) {
        auto gmat = as_matrix(g, Cout, Lout, n * Cout * Lout);
        if (needs_grad(w)) {
          im2col_1d(xv, n, K, stride, pad, Lout, col);
          as_matrix(grad(w), Cout, Cin * K).noalias() +=
              gmat * as_matrix(col, Cin * K, Lout).transpose();
        }
        if (needs_grad(x)) {
          as_matrix(col, Cin * K, Lout).noalias() =
              as_matrix(wv, Cout, Cin * K).transpose() * gmat;
          Tensor<T>& gx = grad(x);
          for (int64_t c = 0; c < Cin; ++c)
            for (int64_t k = 0; k < K; ++k)
              for (int64_t t = 0; t < Lout; ++t) {
                const int64_t src = t * stride + k - pad;
                if (src >= 0 && src < L) gx.at(n, c, src) += col.at(c * K + k, t);
              }
        }
      }
    });
  }

  // x[N,Cin,H,W] (*) w[Cout,Cin,kh,kw], correlation, square stride/pad.
  Id conv2d(Id x, Id w, int64_t stride, int64_t pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1))
      throw TrainError("conv2d: shape mismatch");
    const int64_t N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const int64_t Hout = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wout = (W + 2 * pad - kw) / stride + 1;
    if (Hout <= 0 || Wout <= 0) throw TrainError("conv2d: input smaller than kernel");

    const int64_t CK = Cin * kh * kw, S = Hout * Wout;
    Tensor<T> y({N, Cout, Hout, Wout});
    Tensor<T> col({CK, S});
    for (int64_t n = 0; n < N; ++n) {
      im2col_2d(xv, n, kh, kw, stride, pad, Hout, Wout, col);
      as_matrix(y, Cout, S, n * Cout * S).noalias() =
          as_matrix(wv, Cout, CK) * as_matrix(col, CK, S);
    }
    const bool ng = needs_grad(x) || needs_grad(w);
    return emplace(std::move(y), ng,
                   [this, x, w, stride, pad, N, Cin, H, W, Cout, kh, kw, Hout, Wout](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& xv = val(x);
      const Tensor<T>& wv = val(w);
      const int64_t CK = Cin * kh * kw, S = Hout * Wout;
      Tensor<T> col({CK, S});
      for (int64_t n = 0; n < N; ++n) {
        auto gmat = as_matrix(g, Cout, S, n * Cout * S);
        if (needs_grad(w)) {
          im2col_2d(xv, n, kh, kw, stride, pad, Hout, Wout, col);
          as_matrix(grad(w), Cout, CK).noalias() += gmat * as_matrix(col, CK, S).transpose();
        }
        if (needs_grad(x)) {
          as_matrix(col, CK, S).noalias() = as_matrix(wv, Cout, CK).transpose() * gmat;
          Tensor<T>& gx = grad(x);
          for (int64_t c = 0; c < Cin; ++c)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t row = (c * kh + i) * kw + j;
                for (int64_t ho = 0; ho < Hout; ++ho) {
                  const int64_t hs = ho * stride + i - pad;
                  if (hs < 0 || hs >= H) continue;
                  for (int64_t wo = 0; wo < Wout; ++wo) {
                    const int64_t ws = wo * stride + j - pad;
                    if (ws >= 0 && ws < W) gx.at(n, c, hs, ws) += col.at(row, ho * Wout + wo);
                  }
                }
              }
        }
      }
    });
  }

  // ---- pooling / reductions ---------------------------------------------

  // x[N,C,L] -> y[N,C,F], mean over contiguous windows.
  Id avg_pool1d(Id x, int64_t win, int64_t hop) {
    const Tensor<T>& xv = val(x);
    if (xv.rank() != 3) throw TrainError("avg_pool1d: expects rank-3 input");
    const int64_t N = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
    const int64_t F = (L - win) / hop + 1;
    if (win <= 0 || hop <= 0 || F <= 0) throw TrainError("avg_pool1d: bad window");
    Tensor<T> y({N, C, F});
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t f = 0; f < F; ++f) {
          T acc = 0;
          const int64_t base = f * hop;
          for (int64_t k = 0; k < win; ++k) acc += xv.at(n, c, base + k);
          y.at(n, c, f) = acc / T(win);
        }
    return emplace(std::move(y), needs_grad(x), [this, x, win, hop, N, C, F](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      Tensor<T>& gx = grad(x);
      const T inv = T(1) / T(win);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t f = 0; f < F; ++f) {
            const T gv = g.at(n, c, f) * inv;
            const int64_t base = f * hop;
            for (int64_t k = 0; k < win; ++k) gx.at(n, c, base + k) += gv;
          }
    });
  }

  // x[N,C,H,W] -> y[N,C,W]: mean over the H (filter/frequency) axis.
  Id mean_freq(Id x) {
    const Tensor<T>& xv = val(x);
    if (xv.rank() != 4) throw TrainError("mean_freq: expects rank-4 input");
    const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor<T> y({N, C, W});
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t w = 0; w < W; ++w) {
          T acc = 0;
          for (int64_t h = 0; h < H; ++h) acc += xv.at(n, c, h, w);
          y.at(n, c, w) = acc / T(H);
        }
    return emplace(std::move(y), needs_grad(x), [this, x, N, C, H, W](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      Tensor<T>& gx = grad(x);
      const T inv = T(1) / T(H);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t w = 0; w < W; ++w) {
            const T gv = g.at(n, c, w) * inv;
            for (int64_t h = 0; h < H; ++h) gx.at(n, c, h, w) += gv;
          }
    });
  }

  // ---- batch norm --------------------------------------------------------

  // Channel-wise batch norm for [N,C,...] tensors. Training mode normalizes
  // with batch statistics and folds them into the external running buffers;
  // eval mode normalizes with the running buffers.
  Id batchnorm(Id x, Id gamma, Id beta, Tensor<T>* running_mean, Tensor<T>* running_var,
               bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    const Tensor<T>& xv = val(x);
    if (xv.rank() < 2) throw TrainError("batchnorm: expects rank >= 2");
    const int64_t N = xv.dim(0), C = xv.dim(1);
    int64_t S = 1;
    for (int r = 2; r < xv.rank(); ++r) S *= xv.dim(r);
    const int64_t M = N * S;
    if (val(gamma).numel() != C || val(beta).numel() != C || running_mean->numel() != C ||
        running_var->numel() != C)
      throw TrainError("batchnorm: channel mismatch");

    auto mean = std::make_shared<std::vector<T>>(size_t(C), T(0));
    auto invstd = std::make_shared<std::vector<T>>(size_t(C), T(0));
    if (training) {
      if (M < 2) throw TrainError("batchnorm: training mode needs more than one value per channel");
      for (int64_t c = 0; c < C; ++c) {
        T acc = 0;
        for (int64_t n = 0; n < N; ++n)
          for (int64_t s = 0; s < S; ++s) acc += xv[(n * C + c) * S + s];
        (*mean)[size_t(c)] = acc / T(M);
      }
      for (int64_t c = 0; c < C; ++c) {
        T acc = 0;
        const T m = (*mean)[size_t(c)];
        for (int64_t n = 0; n < N; ++n)
          for (int64_t s = 0; s < S; ++s) {
            const T d = xv[(n * C + c) * S + s] - m;
            acc += d * d;
          }
        const T var = acc / T(M);
        (*invstd)[size_t(c)] = T(1) / std::sqrt(var + eps);
        const T unbiased = M > 1 ? acc / T(M - 1) : var;
        (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * m;
        (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * unbiased;
      }
    } else {
      for (int64_t c = 0; c < C; ++c) {
        (*mean)[size_t(c)] = (*running_mean)[c];
        (*invstd)[size_t(c)] = T(1) / std::sqrt((*running_var)[c] + eps);
      }
    }

    const Tensor<T>& gv = val(gamma);
    const Tensor<T>& bv = val(beta);
    Tensor<T> y(xv.shape());
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T m = (*mean)[size_t(c)], is = (*invstd)[size_t(c)], ga = gv[c], be = bv[c];
        const int64_t base = (n * C + c) * S;
        for (int64_t s = 0; s < S; ++s) y[base + s] = ga * (xv[base + s] - m) * is + be;
      }

    const bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    return emplace(std::move(y), ng,
                   [this, x, gamma, beta, mean, invstd, training, N, C, S, M](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& xv = val(x);
      const Tensor<T>& gv = val(gamma);
      for (int64_t c = 0; c < C; ++c) {
        const T m = (*mean)[size_t(c)], is = (*invstd)[size_t(c)];
        T sum_g = 0, sum_gx = 0;
        for (int64_t n = 0; n < N; ++n) {
          const int64_t base = (n * C + c) * S;
          for (int64_t s = 0; s < S; ++s) {
            const T gi = g[base + s];
            sum_g += gi;
            sum_gx += gi * (xv[base + s] - m) * is;
          }
        }
        if (needs_grad(gamma)) grad(gamma)[c] += sum_gx;
        if (needs_grad(beta)) grad(beta)[c] += sum_g;
        if (needs_grad(x)) {
          Tensor<T>& gx = grad(x);
          const T ga_is = gv[c] * is;
          for (int64_t n = 0; n < N; ++n) {
            const int64_t base = (n * C + c) * S;
            for (int64_t s = 0; s < S; ++s) {
              const T xhat = (xv[base + s] - m) * is;
              if (training)
                gx[base + s] += ga_is * (g[base + s] - sum_g / T(M) - xhat * sum_gx / T(M));
              else
                gx[base + s] += ga_is * g[base + s];
            }
          }
        }
      }
    });
  }

  // ---- dictionary pooling ------------------------------------------------

  // x[N,D,T], centers mu[C,D], raw smoothing s_raw[C] (softplus-mapped).
  // Per frame t: w_tc = softmax_c(-s_c * ||x_t - mu_c||^2).
  // Per component: e_c = sum_t w_tc (x_t - mu_c) / sum_t w_tc.
  // Output: concatenated residuals [N, C*D].
  Id lde(Id x, Id mu, Id s_raw) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& mv = val(mu);
    const Tensor<T>& sv = val(s_raw);
    if (xv.rank() != 3 || mv.rank() != 2 || xv.dim(1) != mv.dim(1) || sv.numel() != mv.dim(0))
      throw TrainError("lde: shape mismatch");
    const int64_t N = xv.dim(0), D = xv.dim(1), F = xv.dim(2), C = mv.dim(0);

    auto s = std::make_shared<std::vector<T>>(size_t(C));
    for (int64_t c = 0; c < C; ++c)
      (*s)[size_t(c)] = std::log1p(std::exp(sv[c]));  // softplus
    auto wts = std::make_shared<Tensor<T>>(std::vector<int64_t>{N, F, C});

    Tensor<T> y({N, C * D});
    for (int64_t n = 0; n < N; ++n) {
      // soft assignment per frame
      for (int64_t f = 0; f < F; ++f) {
        T best = -std::numeric_limits<T>::infinity();
        std::vector<T> a(static_cast<size_t>(C));
        for (int64_t c = 0; c < C; ++c) {
          T d2 = 0;
          for (int64_t d = 0; d < D; ++d) {
            const T r = xv.at(n, d, f) - mv.at(c, d);
            d2 += r * r;
          }
          a[size_t(c)] = -(*s)[size_t(c)] * d2;
          best = std::max(best, a[size_t(c)]);
        }
        T z = 0;
        for (int64_t c = 0; c < C; ++c) z += std::exp(a[size_t(c)] - best);
        for (int64_t c = 0; c < C; ++c) wts->at(n, f, c) = std::exp(a[size_t(c)] - best) / z;
      }
      // aggregated residuals
      for (int64_t c = 0; c < C; ++c) {
        T wsum = 0;
        for (int64_t f = 0; f < F; ++f) wsum += wts->at(n, f, c);
        for (int64_t d = 0; d < D; ++d) {
          T acc = 0;
          for (int64_t f = 0; f < F; ++f)
            acc += wts->at(n, f, c) * (xv.at(n, d, f) - mv.at(c, d));
          y.at(n, c * D + d) = wsum > T(0) ? acc / wsum : T(0);
        }
      }
    }

    const bool ng = needs_grad(x) || needs_grad(mu) || needs_grad(s_raw);
    return emplace(std::move(y), ng, [this, x, mu, s_raw, s, wts, N, D, F, C](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& yv = nodes_[size_t(out)].val;
      const Tensor<T>& xv = val(x);
      const Tensor<T>& mv = val(mu);
      const Tensor<T>& sv = val(s_raw);

      for (int64_t n = 0; n < N; ++n) {
        std::vector<T> wsum(size_t(C), T(0));
        for (int64_t c = 0; c < C; ++c)
          for (int64_t f = 0; f < F; ++f) wsum[size_t(c)] += wts->at(n, f, c);

        // u_fc = dL/dw_fc via e_c; v_fc = dL/da_fc via the softmax
        Tensor<T> u({F, C}), v({F, C});
        for (int64_t f = 0; f < F; ++f)
          for (int64_t c = 0; c < C; ++c) {
            T acc = 0;
            for (int64_t d = 0; d < D; ++d) {
              const T r = xv.at(n, d, f) - mv.at(c, d);
              acc += g.at(n, c * D + d) * (r - yv.at(n, c * D + d));
            }
            u.at(f, c) = wsum[size_t(c)] > T(0) ? acc / wsum[size_t(c)] : T(0);
          }
        for (int64_t f = 0; f < F; ++f) {
          T dot = 0;
          for (int64_t c = 0; c < C; ++c) dot += wts->at(n, f, c) * u.at(f, c);
          for (int64_t c = 0; c < C; ++c) v.at(f, c) = wts->at(n, f, c) * (u.at(f, c) - dot);
        }

        for (int64_t c = 0; c < C; ++c) {
          const T sc = (*s)[size_t(c)];
          T ds_acc = 0;
          for (int64_t f = 0; f < F; ++f) {
            const T w_fc = wts->at(n, f, c);
            const T inv_wsum = wsum[size_t(c)] > T(0) ? T(1) / wsum[size_t(c)] : T(0);
            T d2 = 0;
            for (int64_t d = 0; d < D; ++d) {
              const T r = xv.at(n, d, f) - mv.at(c, d);
              d2 += r * r;
              // dL/dr = w_fc*g/wsum (through e) - 2 s_c v_fc r (through a)
              const T dr = w_fc * g.at(n, c * D + d) * inv_wsum - T(2) * sc * v.at(f, c) * r;
              if (needs_grad(x)) grad(x).at(n, d, f) += dr;
              if (needs_grad(mu)) grad(mu).at(c, d) -= dr;
            }
            ds_acc += v.at(f, c) * (-d2);
          }
          if (needs_grad(s_raw)) {
            const T sig = T(1) / (T(1) + std::exp(-sv[c]));  // d softplus
            grad(s_raw)[c] += ds_acc * sig;
          }
        }
      }
    });
  }

  // Row-wise L2 normalization of [N,M].
  Id l2norm_rows(Id x, T eps = T(1e-12)) {
    const Tensor<T>& xv = val(x);
    if (xv.rank() != 2) throw TrainError("l2norm_rows: expects rank-2 input");
    const int64_t N = xv.dim(0), M = xv.dim(1);
    auto norms = std::make_shared<std::vector<T>>(size_t(N));
    Tensor<T> y({N, M});
    for (int64_t n = 0; n < N; ++n) {
      T acc = eps;
      for (int64_t m = 0; m < M; ++m) acc += xv.at(n, m) * xv.at(n, m);
      const T nr = std::sqrt(acc);
      (*norms)[size_t(n)] = nr;
      for (int64_t m = 0; m < M; ++m) y.at(n, m) = xv.at(n, m) / nr;
    }
    return emplace(std::move(y), needs_grad(x), [this, x, norms, N, M](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& yv = nodes_[size_t(out)].val;
      Tensor<T>& gx = grad(x);
      for (int64_t n = 0; n < N; ++n) {
        T dot = 0;
        for (int64_t m = 0; m < M; ++m) dot += g.at(n, m) * yv.at(n, m);
        const T inv = T(1) / (*norms)[size_t(n)];
        for (int64_t m = 0; m < M; ++m)
          gx.at(n, m) += (g.at(n, m) - yv.at(n, m) * dot) * inv;
      }
    });
  }

  // ---- losses ------------------------------------------------------------

  // Mean cross-entropy against soft targets blended with the uniform
  // distribution: t' = (1-eps)*t + eps/K.
  Id softmax_ce(Id logits, const Tensor<T>& targets, T smoothing = T(0)) {
    const Tensor<T>& zv = val(logits);
    if (zv.rank() != 2 || !zv.same_shape(targets)) throw TrainError("softmax_ce: shape mismatch");
    const int64_t N = zv.dim(0), K = zv.dim(1);
    auto probs = std::make_shared<Tensor<T>>(std::vector<int64_t>{N, K});
    auto tprime = std::make_shared<Tensor<T>>(std::vector<int64_t>{N, K});
    T loss = 0;
    for (int64_t n = 0; n < N; ++n) {
      T mx = zv.at(n, 0);
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, zv.at(n, k));
      T z = 0;
      for (int64_t k = 0; k < K; ++k) z += std::exp(zv.at(n, k) - mx);
      const T lse = mx + std::log(z);
      for (int64_t k = 0; k < K; ++k) {
        const T t = (T(1) - smoothing) * targets.at(n, k) + smoothing / T(K);
        tprime->at(n, k) = t;
        probs->at(n, k) = std::exp(zv.at(n, k) - lse);
        loss -= t * (zv.at(n, k) - lse);
      }
    }
    loss /= T(N);
    return emplace(Tensor<T>::scalar(loss), needs_grad(logits),
                   [this, logits, probs, tprime, N, K](Id out) {
      const T g = nodes_[size_t(out)].grad[0];
      Tensor<T>& gz = grad(logits);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t k = 0; k < K; ++k)
          gz.at(n, k) += g * (probs->at(n, k) - tprime->at(n, k)) / T(N);
    });
  }

  // Mean element-wise binary cross-entropy on sigmoid(logits), stable form.
  Id sigmoid_bce(Id logits, const Tensor<T>& targets) {
    const Tensor<T>& zv = val(logits);
    if (!zv.same_shape(targets)) throw TrainError("sigmoid_bce: shape mismatch");
    const int64_t E = zv.numel();
    T loss = 0;
    for (int64_t i = 0; i < E; ++i) {
      const T z = zv[i], y = targets[i];
      loss += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= T(E);
    auto tgt = std::make_shared<Tensor<T>>(targets);
    return emplace(Tensor<T>::scalar(loss), needs_grad(logits), [this, logits, tgt, E](Id out) {
      const T g = nodes_[size_t(out)].grad[0];
      const Tensor<T>& zv = val(logits);
      Tensor<T>& gz = grad(logits);
      for (int64_t i = 0; i < E; ++i) {
        const T p = T(1) / (T(1) + std::exp(-zv[i]));
        gz[i] += g * (p - (*tgt)[i]) / T(E);
      }
    });
  }

  // ---- sinc front-end kernels -------------------------------------------

  // Band-pass kernel bank from unconstrained cutoff parameters low[F], band[F].
  // f1 = min_low + |low| (capped below Nyquist - min_band);
  // f2 = min(f1 + min_band + |band|, Nyquist). Kernel:
  // g[n] = (sin(2 pi f2 n/sr) - sin(2 pi f1 n/sr)) / (pi n / sr) in normalized
  // units, Hamming-windowed, then max-normalized per filter. Built half+mirror
  // so even symmetry is exact. Output shape [F, 1, L].
  Id sinc_kernels(Id low, Id band, int64_t kernel_len, double sample_rate, double min_low_hz,
                  double min_band_hz) {
    const Tensor<T>& lv = val(low);
    const Tensor<T>& bv = val(band);
    if (lv.numel() != bv.numel()) throw TrainError("sinc_kernels: size mismatch");
    if (kernel_len % 2 == 0) throw TrainError("sinc_kernels: kernel_len must be odd");
    const int64_t Fn = lv.numel(), L = kernel_len, h = (L - 1) / 2;
    const double nyq = sample_rate / 2.0;

    auto f1s = std::make_shared<std::vector<T>>(size_t(Fn));
    auto f2s = std::make_shared<std::vector<T>>(size_t(Fn));
    auto capped1 = std::make_shared<std::vector<bool>>(size_t(Fn));
    auto capped2 = std::make_shared<std::vector<bool>>(size_t(Fn));
    auto norms = std::make_shared<std::vector<T>>(size_t(Fn));
    auto arg = std::make_shared<std::vector<int64_t>>(size_t(Fn));
    auto win = std::make_shared<std::vector<T>>(size_t(h) + 1);
    for (int64_t n = 0; n <= h; ++n)
      (*win)[size_t(n)] = T(0.54 + 0.46 * std::cos(2.0 * M_PI * double(n) / double(L - 1)));

    Tensor<T> y({Fn, 1, L});
    Tensor<T> pre({Fn, L});  // windowed, un-normalized kernels (for backward)
    for (int64_t f = 0; f < Fn; ++f) {
      T f1 = T(min_low_hz) + std::abs(lv[f]);
      const bool c1 = f1 > T(nyq - min_band_hz);
      if (c1) f1 = T(nyq - min_band_hz);
      T f2 = f1 + T(min_band_hz) + std::abs(bv[f]);
      const bool c2 = f2 > T(nyq);
      if (c2) f2 = T(nyq);
      (*f1s)[size_t(f)] = f1;
      (*f2s)[size_t(f)] = f2;
      (*capped1)[size_t(f)] = c1;
      (*capped2)[size_t(f)] = c2;

      // normalized digital frequencies
      const T w1 = T(2.0 * M_PI) * f1 / T(sample_rate);
      const T w2 = T(2.0 * M_PI) * f2 / T(sample_rate);
      for (int64_t n = 0; n <= h; ++n) {
        T raw;
        if (n == 0)
          raw = (w2 - w1) / T(M_PI);  // = 2(f2-f1)/sr
        else
          raw = (std::sin(w2 * T(n)) - std::sin(w1 * T(n))) / (T(M_PI) * T(n));
        const T k = raw * (*win)[size_t(n)];
        pre.at(f, h + n) = k;
        pre.at(f, h - n) = k;  // exact mirror
      }
      T mx = 0;
      int64_t mi = h;
      for (int64_t n = 0; n < L; ++n) {
        const T a = std::abs(pre.at(f, n));
        if (a > mx) {
          mx = a;
          mi = n;
        }
      }
      if (mx <= T(0)) mx = T(1);
      (*norms)[size_t(f)] = mx;
      (*arg)[size_t(f)] = mi;
      for (int64_t n = 0; n < L; ++n) y.at(f, 0, n) = pre.at(f, n) / mx;
    }

    auto pre_sp = std::make_shared<Tensor<T>>(std::move(pre));
    const bool ng = needs_grad(low) || needs_grad(band);
    return emplace(std::move(y), ng,
                   [this, low, band, f1s, f2s, capped1, capped2, norms, arg, win, pre_sp, Fn, L, h,
                    sample_rate](Id out) {
      const Tensor<T>& g = nodes_[size_t(out)].grad;
      const Tensor<T>& lv = val(low);
      const Tensor<T>& bv = val(band);
      for (int64_t f = 0; f < Fn; ++f) {
        const T m = (*norms)[size_t(f)];
        const int64_t mi = (*arg)[size_t(f)];
        // dL/dk[n] through y = k/m with m = |k[mi]|
        T gk_dot_k = 0;
        for (int64_t n = 0; n < L; ++n) gk_dot_k += g.at(f, 0, n) * pre_sp->at(f, n);
        const T sgn = pre_sp->at(f, mi) >= T(0) ? T(1) : T(-1);

        const T w1 = T(2.0 * M_PI) * (*f1s)[size_t(f)] / T(sample_rate);
        const T w2 = T(2.0 * M_PI) * (*f2s)[size_t(f)] / T(sample_rate);
        T df1 = 0, df2 = 0;
        for (int64_t n = 0; n < L; ++n) {
          T gk = g.at(f, 0, n) / m;
          if (n == mi) gk -= sgn * gk_dot_k / (m * m);
          const int64_t off = n - h;               // signed tap index
          const T t = T(std::abs(off));            // |n| in samples
          const T wn = (*win)[size_t(std::abs(off))];
          // d raw/d f2 = 2 cos(w2 |n|)/sr, d raw/d f1 = -2 cos(w1 |n|)/sr
          df2 += gk * wn * T(2.0 / sample_rate) * std::cos(w2 * t);
          df1 -= gk * wn * T(2.0 / sample_rate) * std::cos(w1 * t);
        }
        // chain through the clamped cutoff mapping
        T dlow = 0, dband = 0;
        const bool c1 = (*capped1)[size_t(f)], c2 = (*capped2)[size_t(f)];
        const T df1_total = df1 + (c2 ? T(0) : df2);
        if (!c1) dlow = df1_total * (lv[f] >= T(0) ? T(1) : T(-1));
        if (!c2) dband = df2 * (bv[f] >= T(0) ? T(1) : T(-1));
        if (needs_grad(low)) grad(low)[f] += dlow;
        if (needs_grad(band)) grad(band)[f] += dband;
      }
    });
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  Id emplace(Tensor<T> v, bool needs_grad, std::function<void(Id)> back) {
    const Id id = Id(nodes_.size());
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    if (needs_grad && back) n.back = [this, id, fn = std::move(back)] { fn(id); };
    nodes_.push_back(std::move(n));
    return id;
  }

  static void im2col_1d(const Tensor<T>& x, int64_t n, int64_t K, int64_t stride, int64_t pad,
                        int64_t Lout, Tensor<T>& col) {
    const int64_t Cin = x.dim(1), L = x.dim(2);
    for (int64_t c = 0; c < Cin; ++c)
      for (int64_t k = 0; k < K; ++k) {
        T* dst = col.data() + (c * K + k) * Lout;
        for (int64_t t = 0; t < Lout; ++t) {
          const int64_t src = t * stride + k - pad;
          dst[t] = (src >= 0 && src < L) ? x.at(n, c, src) : T(0);
        }
      }
  }

  static void im2col_2d(const Tensor<T>& x, int64_t n, int64_t kh, int64_t kw, int64_t stride,
                        int64_t pad, int64_t Hout, int64_t Wout, Tensor<T>& col) {
    const int64_t Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (int64_t c = 0; c < Cin; ++c)
      for (int64_t i = 0; i < kh; ++i)
        for (int64_t j = 0; j < kw; ++j) {
          T* dst = col.data() + ((c * kh + i) * kw + j) * (Hout * Wout);
          for (int64_t ho = 0; ho < Hout; ++ho) {
            const int64_t hs = ho * stride + i - pad;
            for (int64_t wo = 0; wo < Wout; ++wo) {
              const int64_t ws = wo * stride + j - pad;
              dst[ho * Wout + wo] =
                  (hs >= 0 && hs < H && ws >= 0 && ws < W) ? x.at(n, c, hs, ws) : T(0);
            }
          }
        }
  }

  std::vector<Node> nodes_;
};

}  // namespace timbre
