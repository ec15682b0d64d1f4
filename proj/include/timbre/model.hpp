// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "timbre/common.hpp"
#include "timbre/graph.hpp"
#include "timbre/tensor.hpp"

namespace timbre {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configs

enum class HeadKind { kSoftmaxCe, kSigmoidBce };

inline const char* head_kind_name(HeadKind k) {
  return k == HeadKind::kSoftmaxCe ? "softmax_ce" : "sigmoid_bce";
}
inline HeadKind head_kind_from_name(const std::string& s) {
  if (s == "softmax_ce") return HeadKind::kSoftmaxCe;
  if (s == "sigmoid_bce") return HeadKind::kSigmoidBce;
  throw ConfigError("unknown head kind: " + s);
}

struct SincFrontendConfig {
  int n_filters = 40;
  int kernel_len = 251;  // odd
  int stride = 5;
  double f_min = 30.0;
  double f_max = 8000.0;
  double min_band_hz = 25.0;
  double frame_ms = 25.0;
  double hop_ms = 10.0;

  void validate(int sample_rate) const {
    if (n_filters < 1) throw ConfigError("frontend: n_filters must be >= 1");
    if (kernel_len < 3 || kernel_len % 2 == 0)
      throw ConfigError("frontend: kernel_len must be odd and >= 3");
    if (stride < 1) throw ConfigError("frontend: stride must be >= 1");
    if (!(0 < f_min && f_min < f_max && f_max <= sample_rate / 2.0))
      throw ConfigError("frontend: need 0 < f_min < f_max <= Nyquist");
    if (min_band_hz <= 0) throw ConfigError("frontend: min_band_hz must be positive");
    if (frame_ms <= 0 || hop_ms <= 0 || hop_ms > frame_ms)
      throw ConfigError("frontend: bad frame/hop");
  }
};

struct EncoderConfig {
  std::array<int, 4> depths{2, 2, 2, 2};
  std::array<int, 4> widths{16, 32, 64, 128};
  bool shared_blocks = true;

  void validate() const {
    for (int d : depths)
      if (d < 1) throw ConfigError("encoder: every stage depth must be >= 1");
    for (size_t i = 0; i < 4; ++i) {
      if (widths[i] < 1) throw ConfigError("encoder: widths must be positive");
      if (i > 0 && widths[i] <= widths[i - 1])
        throw ConfigError("encoder: widths must be strictly increasing");
    }
  }
};

struct LDEConfig {
  int n_components = 8;
  void validate() const {
    if (n_components < 2) throw ConfigError("lde: n_components must be >= 2");
  }
};

struct ModelConfig {
  int sample_rate = 16000;
  SincFrontendConfig frontend;
  EncoderConfig encoder;
  LDEConfig lde;
  HeadKind head = HeadKind::kSoftmaxCe;
  int n_out = 0;

  void validate() const {
    if (sample_rate < 1000) throw ConfigError("model: sample_rate too small");
    frontend.validate(sample_rate);
    encoder.validate();
    lde.validate();
    if (n_out < 2) throw ConfigError("model: n_out must be >= 2");
  }

  int feature_dim() const { return encoder.widths[3]; }
  int embedding_dim() const { return encoder.widths[3] * lde.n_components; }

  json to_json() const {
    json j;
    j["sample_rate"] = sample_rate;
    j["frontend"] = {{"n_filters", frontend.n_filters}, {"kernel_len", frontend.kernel_len},
                     {"stride", frontend.stride},       {"f_min", frontend.f_min},
                     {"f_max", frontend.f_max},         {"min_band_hz", frontend.min_band_hz},
                     {"frame_ms", frontend.frame_ms},   {"hop_ms", frontend.hop_ms}};
    j["encoder"] = {{"depths", encoder.depths},
                    {"widths", encoder.widths},
                    {"shared_blocks", encoder.shared_blocks}};
    j["lde"] = {{"n_components", lde.n_components}};
    j["head"] = head_kind_name(head);
    j["n_out"] = n_out;
    return j;
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    if (j.contains("frontend")) {
      const json& f = j.at("frontend");
      c.frontend.n_filters = f.value("n_filters", c.frontend.n_filters);
      c.frontend.kernel_len = f.value("kernel_len", c.frontend.kernel_len);
      c.frontend.stride = f.value("stride", c.frontend.stride);
      c.frontend.f_min = f.value("f_min", c.frontend.f_min);
      c.frontend.f_max = f.value("f_max", c.frontend.f_max);
      c.frontend.min_band_hz = f.value("min_band_hz", c.frontend.min_band_hz);
      c.frontend.frame_ms = f.value("frame_ms", c.frontend.frame_ms);
      c.frontend.hop_ms = f.value("hop_ms", c.frontend.hop_ms);
    }
    if (j.contains("encoder")) {
      const json& e = j.at("encoder");
      if (e.contains("depths")) c.encoder.depths = e.at("depths").get<std::array<int, 4>>();
      if (e.contains("widths")) c.encoder.widths = e.at("widths").get<std::array<int, 4>>();
      c.encoder.shared_blocks = e.value("shared_blocks", c.encoder.shared_blocks);
    }
    if (j.contains("lde")) c.lde.n_components = j.at("lde").value("n_components", 8);
    if (j.contains("head")) c.head = head_kind_from_name(j.at("head").get<std::string>());
    c.n_out = j.value("n_out", 0);
    return c;
  }
};

namespace detail {

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace detail

inline std::string model_fingerprint(const ModelConfig& c) {
  return detail::hex64(detail::fnv1a64(c.to_json().dump()));
}

/// Head-independent fingerprint: what must match for a head swap to be legal.
inline std::string body_fingerprint(const ModelConfig& c) {
  json j = c.to_json();
  j.erase("head");
  j.erase("n_out");
  return detail::hex64(detail::fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Mel-scale cutoff initialization

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct SincParams {
  std::vector<double> low_hz;   // unconstrained; effective f1 = f_min + |low|
  std::vector<double> band_hz;  // unconstrained; effective band = min_band + |band|
};

// n_filters+1 edges equally spaced on the mel scale; filter i spans
// [edge_i, edge_{i+1}]. Values are stored in the unconstrained parameterization
// so that the effective cutoffs land exactly on the edges.
inline SincParams mel_init(const SincFrontendConfig& cfg) {
  SincParams p;
  const double m_lo = hz_to_mel(cfg.f_min), m_hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(size_t(cfg.n_filters) + 1);
  for (int i = 0; i <= cfg.n_filters; ++i)
    edges[size_t(i)] = mel_to_hz(m_lo + (m_hi - m_lo) * double(i) / double(cfg.n_filters));
  edges.front() = cfg.f_min;  // exact endpoints
  edges.back() = cfg.f_max;
  for (int i = 0; i < cfg.n_filters; ++i) {
    p.low_hz.push_back(edges[size_t(i)] - cfg.f_min);
    p.band_hz.push_back(std::max(0.0, (edges[size_t(i) + 1] - edges[size_t(i)]) - cfg.min_band_hz));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Parameter store

template <typename T>
struct ParamStoreT {
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };
  std::map<std::string, Entry> items;  // sorted names = canonical order

  void add(const std::string& name, Tensor<T> v, bool trainable = true) {
    if (items.count(name)) throw ConfigError("duplicate parameter name: " + name);
    items[name] = Entry{std::move(v), trainable};
  }
  Tensor<T>& at(const std::string& name) {
    auto it = items.find(name);
    if (it == items.end()) throw ConfigError("unknown parameter: " + name);
    return it->second.value;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = items.find(name);
    if (it == items.end()) throw ConfigError("unknown parameter: " + name);
    return it->second.value;
  }
  bool has(const std::string& name) const { return items.count(name) > 0; }

  int64_t count(bool trainable_only = true) const {
    int64_t n = 0;
    for (const auto& [name, e] : items)
      if (!trainable_only || e.trainable) n += e.value.numel();
    return n;
  }

  template <typename U>
  ParamStoreT<U> cast() const {
    ParamStoreT<U> out;
    for (const auto& [name, e] : items)
      out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  bool all_finite() const {
    for (const auto& [name, e] : items)
      if (!e.value.all_finite()) return false;
    return true;
  }
};

using ParamStore = ParamStoreT<float>;

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

template <typename T>
Tensor<T> he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double std = std::sqrt(2.0 / double(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(std * rng.normal());
  return t;
}

inline Rng param_rng(uint64_t seed, const std::string& name) {
  return Rng(derive_seed(seed, {0x696e6974ULL, fnv1a64(name)}));
}

}  // namespace detail

// Stage/block parameter naming:
//   stem.conv.w, stem.bn.{gamma,beta,running_mean,running_var}
//   s{k}.b{j}.conv1.w                 (transition blocks: j=0 of stages 2-4,
//                                      stride-2 conv1 + 1x1 shortcut)
//   s{k}.b{j}.conv2.w  or  s{k}.conv2s.w when shared_blocks (one per stage)
//   s{k}.b{j}.bn1.*, s{k}.b{j}.bn2.*, s{k}.b0.short.w, s{k}.b0.shortbn.*
//   frontend.low_hz, frontend.band_hz, lde.mu, lde.s, head.w, head.b
inline ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore ps;

  SincParams sp = mel_init(cfg.frontend);
  {
    Tensor<float> low({cfg.frontend.n_filters}), band({cfg.frontend.n_filters});
    for (int i = 0; i < cfg.frontend.n_filters; ++i) {
      low[i] = float(sp.low_hz[size_t(i)]);
      band[i] = float(sp.band_hz[size_t(i)]);
    }
    ps.add("frontend.low_hz", std::move(low));
    ps.add("frontend.band_hz", std::move(band));
  }

  auto add_bn = [&](const std::string& prefix, int64_t c) {
    ps.add(prefix + ".gamma", Tensor<float>::full({c}, 1.0f));
    ps.add(prefix + ".beta", Tensor<float>({c}));
    ps.add(prefix + ".running_mean", Tensor<float>({c}), false);
    ps.add(prefix + ".running_var", Tensor<float>::full({c}, 1.0f), false);
  };
  auto add_conv = [&](const std::string& name, int64_t out_c, int64_t in_c, int64_t kh,
                      int64_t kw) {
    Rng rng = detail::param_rng(seed, name);
    ps.add(name, detail::he_normal<float>({out_c, in_c, kh, kw}, in_c * kh * kw, rng));
  };

  const auto& enc = cfg.encoder;
  add_conv("stem.conv.w", enc.widths[0], 1, 3, 3);
  add_bn("stem.bn", enc.widths[0]);

  for (int s = 1; s <= 4; ++s) {
    const int64_t w = enc.widths[size_t(s - 1)];
    const int64_t w_prev = s == 1 ? enc.widths[0] : enc.widths[size_t(s - 2)];
    const std::string sp_name = "s" + std::to_string(s);
    if (enc.shared_blocks) add_conv(sp_name + ".conv2s.w", w, w, 3, 3);
    for (int j = 0; j < enc.depths[size_t(s - 1)]; ++j) {
      const std::string bp = sp_name + ".b" + std::to_string(j);
      const bool transition = (s > 1 && j == 0);
      add_conv(bp + ".conv1.w", w, transition ? w_prev : w, 3, 3);
      if (!enc.shared_blocks) add_conv(bp + ".conv2.w", w, w, 3, 3);
      add_bn(bp + ".bn1", w);
      add_bn(bp + ".bn2", w);
      if (transition) {
        add_conv(bp + ".short.w", w, w_prev, 1, 1);
        add_bn(bp + ".shortbn", w);
      }
    }
  }

  {
    const int64_t C = cfg.lde.n_components, D = cfg.feature_dim();
    Rng rng = detail::param_rng(seed, "lde.mu");
    Tensor<float> mu({C, D});
    const double scale = 1.0 / std::sqrt(double(D));
    for (int64_t i = 0; i < mu.numel(); ++i) mu[i] = float(scale * rng.normal());
    ps.add("lde.mu", std::move(mu));
    // softplus(s_raw) = 1
    ps.add("lde.s", Tensor<float>::full({C}, float(std::log(std::exp(1.0) - 1.0))));
  }

  {
    const int64_t E = cfg.embedding_dim(), M = cfg.n_out;
    Rng rng = detail::param_rng(seed, "head.w");
    Tensor<float> w({E, M});
    const double scale = 1.0 / std::sqrt(double(E));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = float(rng.uniform(-scale, scale));
    ps.add("head.w", std::move(w));
    ps.add("head.b", Tensor<float>({M}));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Forward graph assembly

template <typename T>
struct ForwardIds {
  using Id = typename Graph<T>::Id;
  Id logits = -1;
  Id embedding = -1;                       // unit-norm penultimate output
  Id feature_map = -1;                     // front-end map [N,1,F,frames]
  std::map<std::string, Id> leaves;        // trainable parameter leaves
};

// Build the full forward pass on the tape. Trainable parameters become leaf
// nodes (values copied from the store); batch-norm running buffers stay in the
// store and are updated in place when training=true.
template <typename T>
ForwardIds<T> model_forward(Graph<T>& g, const ModelConfig& cfg, ParamStoreT<T>& ps,
                            const Tensor<T>& waves, bool training, bool with_grad = true) {
  if (waves.rank() != 2) throw TrainError("model_forward: waves must be [batch, samples]");
  const int64_t N = waves.dim(0), L = waves.dim(1);
  ForwardIds<T> ids;
  auto leaf = [&](const std::string& name) {
    auto it = ids.leaves.find(name);
    if (it != ids.leaves.end()) return it->second;
    typename Graph<T>::Id id = g.value(ps.at(name), with_grad);
    ids.leaves.emplace(name, id);
    return id;
  };

  // front-end
  auto x = g.value(waves.reshaped({N, 1, L}));
  auto kernels =
      g.sinc_kernels(leaf("frontend.low_hz"), leaf("frontend.band_hz"), cfg.frontend.kernel_len,
                     cfg.sample_rate, cfg.frontend.f_min, cfg.frontend.min_band_hz);
  const int64_t pad = (cfg.frontend.kernel_len - 1) / 2;
  auto conv = g.conv1d(x, kernels, cfg.frontend.stride, pad);
  const double conv_rate = double(cfg.sample_rate) / cfg.frontend.stride;
  const int64_t frame = std::llround(cfg.frontend.frame_ms * 1e-3 * conv_rate);
  const int64_t hop = std::llround(cfg.frontend.hop_ms * 1e-3 * conv_rate);
  auto pooled = g.avg_pool1d(g.abs_op(conv), frame, hop);
  auto feats = g.log1p_op(pooled);
  const int64_t frames = g.val(feats).dim(2);
  auto img = g.reshape(feats, {N, 1, cfg.frontend.n_filters, frames});
  ids.feature_map = img;

  // encoder
  auto bn = [&](typename Graph<T>::Id in, const std::string& prefix) {
    return g.batchnorm(in, leaf(prefix + ".gamma"), leaf(prefix + ".beta"),
                       &ps.at(prefix + ".running_mean"), &ps.at(prefix + ".running_var"),
                       training);
  };
  auto h = g.relu(bn(g.conv2d(img, leaf("stem.conv.w"), 1, 1), "stem.bn"));
  for (int s = 1; s <= 4; ++s) {
    const std::string sp = "s" + std::to_string(s);
    for (int j = 0; j < cfg.encoder.depths[size_t(s - 1)]; ++j) {
      const std::string bp = sp + ".b" + std::to_string(j);
      const bool transition = (s > 1 && j == 0);
      const std::string conv2_name =
          cfg.encoder.shared_blocks ? sp + ".conv2s.w" : bp + ".conv2.w";
      auto y = g.conv2d(h, leaf(bp + ".conv1.w"), transition ? 2 : 1, 1);
      y = g.relu(bn(y, bp + ".bn1"));
      y = bn(g.conv2d(y, leaf(conv2_name), 1, 1), bp + ".bn2");
      typename Graph<T>::Id shortcut = h;
      if (transition)
        shortcut = bn(g.conv2d(h, leaf(bp + ".short.w"), 2, 0), bp + ".shortbn");
      h = g.relu(g.add(y, shortcut));
    }
  }

  // pooling + head
  auto fr = g.mean_freq(h);
  auto emb = g.l2norm_rows(g.lde(fr, leaf("lde.mu"), leaf("lde.s")));
  ids.embedding = emb;
  ids.logits = g.affine(emb, leaf("head.w"), leaf("head.b"));
  return ids;
}

// Eval-mode forward returning logits and (optionally) embeddings.
inline Tensor<float> forward_logits(const ModelConfig& cfg, ParamStore& ps,
                                    const Tensor<float>& waves,
                                    Tensor<float>* embeddings = nullptr) {
  Graph<float> g;
  auto ids = model_forward(g, cfg, ps, waves, /*training=*/false, /*with_grad=*/false);
  if (embeddings) *embeddings = g.val(ids.embedding);
  return g.val(ids.logits);
}

// ---------------------------------------------------------------------------
// Parameter counting

struct ParamCounts {
  int64_t frontend = 0;
  int64_t backbone_conv = 0;  // stem + residual conv weights (shared counted once)
  int64_t backbone_bn = 0;    // gamma + beta
  int64_t lde = 0;
  int64_t head = 0;
  int64_t total = 0;
};

inline ParamCounts count_params(const ModelConfig& cfg) {
  cfg.validate();
  ParamCounts pc;
  pc.frontend = 2 * cfg.frontend.n_filters;
  const auto& enc = cfg.encoder;
  pc.backbone_conv += int64_t(enc.widths[0]) * 1 * 9;  // stem
  pc.backbone_bn += 2 * int64_t(enc.widths[0]);
  for (int s = 1; s <= 4; ++s) {
    const int64_t w = enc.widths[size_t(s - 1)];
    const int64_t w_prev = s == 1 ? enc.widths[0] : enc.widths[size_t(s - 2)];
    const int64_t d = enc.depths[size_t(s - 1)];
    if (enc.shared_blocks) pc.backbone_conv += w * w * 9;  // one conv2 per stage
    for (int64_t j = 0; j < d; ++j) {
      const bool transition = (s > 1 && j == 0);
      pc.backbone_conv += w * (transition ? w_prev : w) * 9;  // conv1
      if (!enc.shared_blocks) pc.backbone_conv += w * w * 9;  // conv2
      pc.backbone_bn += 2 * w + 2 * w;                        // bn1, bn2
      if (transition) {
        pc.backbone_conv += w * w_prev;  // 1x1 shortcut
        pc.backbone_bn += 2 * w;
      }
    }
  }
  pc.lde = int64_t(cfg.lde.n_components) * cfg.feature_dim() + cfg.lde.n_components;
  pc.head = int64_t(cfg.embedding_dim()) * cfg.n_out + cfg.n_out;
  pc.total = pc.frontend + pc.backbone_conv + pc.backbone_bn + pc.lde + pc.head;
  return pc;
}

// ---------------------------------------------------------------------------
// Checkpoints ("tfv1": u32 JSON header length, JSON header, then raw
// little-endian f32 blocks in header order)

struct Checkpoint {
  ModelConfig config;
  int64_t step = 0;
  uint64_t seed = 0;  // base seed; all rng streams re-derive from (seed, epoch, ...)
  ParamStore params;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (!ckpt.params.all_finite()) throw TrainError("checkpoint has non-finite parameters");
  json header;
  header["version"] = "tfv1";
  header["config"] = ckpt.config.to_json();
  header["fingerprint"] = model_fingerprint(ckpt.config);
  header["body_fingerprint"] = body_fingerprint(ckpt.config);
  header["step"] = ckpt.step;
  header["seed"] = ckpt.seed;
  json tensors = json::array();
  for (const auto& [name, e] : ckpt.params.items)
    tensors.push_back({{"name", name}, {"shape", e.value.shape()}, {"trainable", e.trainable}});
  header["tensors"] = std::move(tensors);

  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  const uint32_t hlen = uint32_t(hs.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& [name, e] : ckpt.params.items)
    f.write(reinterpret_cast<const char*>(e.value.data()),
            std::streamsize(e.value.numel() * int64_t(sizeof(float))));
  if (!f) throw IoError("short write: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  uint32_t hlen = 0;
  if (!f.read(reinterpret_cast<char*>(&hlen), 4)) throw FormatError("truncated header: " + path);
  std::string hs(hlen, '\0');
  if (!f.read(hs.data(), hlen)) throw FormatError("truncated header: " + path);
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint header: " + std::string(e.what()));
  }
  if (header.value("version", "") != "tfv1")
    throw FormatError("unsupported checkpoint version in " + path);

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config"));
  ckpt.step = header.value("step", int64_t(0));
  ckpt.seed = header.value("seed", uint64_t(0));
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<int64_t>>();
    Tensor<float> v(shape);
    if (!f.read(reinterpret_cast<char*>(v.data()),
                std::streamsize(v.numel() * int64_t(sizeof(float)))))
      throw FormatError("truncated tensor block " + name + " in " + path);
    if (!v.all_finite()) throw FormatError("non-finite values in tensor " + name);
    ckpt.params.add(name, std::move(v), t.value("trainable", true));
  }
  if (model_fingerprint(ckpt.config) != header.value("fingerprint", ""))
    throw FormatError("fingerprint mismatch in " + path);
  return ckpt;
}

// Replace the classification head, keep the body bitwise, reset the step.
inline Checkpoint swap_head(const Checkpoint& ckpt, HeadKind new_kind, int new_n_out,
                            uint64_t seed) {
  Checkpoint out;
  out.config = ckpt.config;
  out.config.head = new_kind;
  out.config.n_out = new_n_out;
  out.config.validate();
  out.step = 0;
  out.seed = seed;
  for (const auto& [name, e] : ckpt.params.items)
    if (name != "head.w" && name != "head.b") out.params.add(name, e.value, e.trainable);

  const int64_t E = out.config.embedding_dim(), M = new_n_out;
  Rng rng = detail::param_rng(seed, "head.w");
  Tensor<float> w({E, M});
  const double scale = 1.0 / std::sqrt(double(E));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = float(rng.uniform(-scale, scale));
  out.params.add("head.w", std::move(w));
  out.params.add("head.b", Tensor<float>({M}));
  return out;
}

// Body compatibility check used when fine-tuning from a checkpoint.
inline void check_body_compatible(const Checkpoint& ckpt, const ModelConfig& cfg) {
  if (body_fingerprint(ckpt.config) != body_fingerprint(cfg))
    throw TrainError("checkpoint body does not match the requested model configuration");
  ParamStore expect = init_params(cfg, 0);
  for (const auto& [name, e] : expect.items) {
    if (name == "head.w" || name == "head.b") continue;
    if (!ckpt.params.has(name))
      throw TrainError("checkpoint missing parameter: " + name);
    if (ckpt.params.at(name).shape() != e.value.shape())
      throw TrainError("checkpoint shape mismatch for parameter: " + name);
  }
}

}  // namespace timbre
