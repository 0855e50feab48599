#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "binloc/core.hpp"
#include "binloc/gcc.hpp"
#include "binloc/srp.hpp"
#include "json.hpp"

namespace binloc {

// ---------------------------------------------------------------------------
// Directions and the absolute-cosine loss

/// 2-D direction: x frontal, y lateral (positive = left).
struct DirectionVector {
  double x = 0.0;
  double y = 0.0;

  double norm() const { return std::hypot(x, y); }
  bool is_degenerate() const { return norm() < 1e-12; }
  DirectionVector operator-() const { return {-x, -y}; }
  DirectionVector operator*(double a) const { return {a * x, a * y}; }

  friend bool operator==(const DirectionVector&, const DirectionVector&) = default;
};

inline DirectionVector direction_from_azimuth(double azimuth_deg) {
  const double t = deg_to_rad(azimuth_deg);
  return {std::cos(t), std::sin(t)};
}

/// 1 - |cos angle(v, v_hat)|; sign-blind, so antipodal estimates are not penalised.
inline double abs_cosine_loss(const DirectionVector& v, const DirectionVector& v_hat) {
  const double nv = v.norm(), nh = v_hat.norm();
  if (!(nv > 0.0) || !(nh > 0.0)) throw Error("loss: degenerate direction");
  const double c = (v.x * v_hat.x + v.y * v_hat.y) / (nv * nh);
  return 1.0 - std::min(1.0, std::abs(c));
}

/// d loss / d v_hat. Zero at |cos| == 1 and (by choice of subgradient) at cos == 0.
inline DirectionVector abs_cosine_loss_gradient(const DirectionVector& v, const DirectionVector& v_hat) {
  const double nv = v.norm(), nh = v_hat.norm();
  if (!(nv > 0.0) || !(nh > 0.0)) throw Error("loss: degenerate direction");
  const double c = (v.x * v_hat.x + v.y * v_hat.y) / (nv * nh);
  const double s = c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
  return {-s * (v.x / (nv * nh) - c * v_hat.x / (nh * nh)), -s * (v.y / (nv * nh) - c * v_hat.y / (nh * nh))};
}

/// Frontal azimuth in [-90, 90]: estimates pointing backwards are folded antipodally first.
inline double vector_to_azimuth(DirectionVector v) {
  if (v.is_degenerate()) throw Error("vector_to_azimuth: degenerate direction");
  if (v.x < 0.0) v = -v;
  if (v.x == 0.0) return v.y >= 0.0 ? 90.0 : -90.0;
  return rad_to_deg(std::atan(v.y / v.x));
}

// ---------------------------------------------------------------------------
// Configuration and parameters

struct CrnConfig {
  std::size_t input_lags = 51;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t pool_time = 2;
  std::size_t pool_lag = 2;
  std::size_t hidden = 64;
  std::size_t dense = 64;

  static CrnConfig desk() { return {}; }
  static CrnConfig paper() {
    CrnConfig c;
    c.conv_channels = {32, 64, 128};
    c.hidden = 150;
    c.dense = 150;
    return c;
  }
  static CrnConfig tiny(std::size_t input_lags = 11) {
    CrnConfig c;
    c.input_lags = input_lags;
    c.conv_channels = {2, 2};
    c.hidden = 4;
    c.dense = 4;
    return c;
  }

  std::size_t blocks() const { return conv_channels.size(); }

  // Lag width after the conv stack.
  std::size_t output_lags() const {
    std::size_t w = input_lags;
    for (std::size_t b = 0; b + 1 < blocks(); ++b) w /= pool_lag;
    return w;
  }
  std::size_t output_frames(std::size_t input_frames) const {
    std::size_t t = input_frames;
    for (std::size_t b = 0; b + 1 < blocks(); ++b) t /= pool_time;
    return t;
  }
  std::size_t recurrent_input() const { return conv_channels.back() * output_lags(); }

  void validate() const {
    if (conv_channels.empty()) throw Error("crn config: need at least one conv block");
    if (input_lags == 0 || hidden == 0 || dense == 0 || pool_time == 0 || pool_lag == 0)
      throw Error("crn config: sizes must be positive");
    if (std::any_of(conv_channels.begin(), conv_channels.end(), [](std::size_t c) { return c == 0; }))
      throw Error("crn config: conv channel counts must be positive");
    if (output_lags() == 0) throw Error("crn config: lag axis pooled away; increase input_lags");
  }

  friend bool operator==(const CrnConfig&, const CrnConfig&) = default;
};

inline void to_json(nlohmann::json& j, const CrnConfig& c) {
  j = nlohmann::json{{"input_lags", c.input_lags}, {"conv_channels", c.conv_channels}, {"pool_time", c.pool_time},
                     {"pool_lag", c.pool_lag},     {"hidden", c.hidden},               {"dense", c.dense}};
}
inline void from_json(const nlohmann::json& j, CrnConfig& c) {
  j.at("input_lags").get_to(c.input_lags);
  j.at("conv_channels").get_to(c.conv_channels);
  j.at("pool_time").get_to(c.pool_time);
  j.at("pool_lag").get_to(c.pool_lag);
  j.at("hidden").get_to(c.hidden);
  j.at("dense").get_to(c.dense);
}

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// All trainable tensors, in a fixed order:
///   per conv block b: conv{b}.weight [out,in,3,3], conv{b}.bias [out], prelu{b}.slope [out]
///   gru.w_ih [3H,D], gru.w_hh [3H,H], gru.b_ih [3H], gru.b_hh [3H]   (gate rows r, z, n)
///   dense.weight [Hd,H], dense.bias [Hd], out.weight [2,Hd], out.bias [2]
struct ModelParams {
  CrnConfig config;
  std::vector<Tensor> tensors;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.data.size();
    return n;
  }

  std::size_t conv_weight(std::size_t b) const { return 3 * b; }
  std::size_t conv_bias(std::size_t b) const { return 3 * b + 1; }
  std::size_t prelu_slope(std::size_t b) const { return 3 * b + 2; }
  std::size_t gru_w_ih() const { return 3 * config.blocks(); }
  std::size_t gru_w_hh() const { return gru_w_ih() + 1; }
  std::size_t gru_b_ih() const { return gru_w_ih() + 2; }
  std::size_t gru_b_hh() const { return gru_w_ih() + 3; }
  std::size_t dense_weight() const { return gru_w_ih() + 4; }
  std::size_t dense_bias() const { return gru_w_ih() + 5; }
  std::size_t out_weight() const { return gru_w_ih() + 6; }
  std::size_t out_bias() const { return gru_w_ih() + 7; }

  const double* data(std::size_t i) const { return tensors[i].data.data(); }
  double* data(std::size_t i) { return tensors[i].data.data(); }

  static ModelParams zeros(const CrnConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
      std::size_t n = 1;
      for (auto d : shape) n *= d;
      p.tensors.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
    };
    std::size_t in = 1;
    for (std::size_t b = 0; b < config.blocks(); ++b) {
      const std::size_t out = config.conv_channels[b];
      add("conv" + std::to_string(b) + ".weight", {out, in, 3, 3});
      add("conv" + std::to_string(b) + ".bias", {out});
      add("prelu" + std::to_string(b) + ".slope", {out});
      in = out;
    }
    const std::size_t h = config.hidden, d = config.recurrent_input();
    add("gru.w_ih", {3 * h, d});
    add("gru.w_hh", {3 * h, h});
    add("gru.b_ih", {3 * h});
    add("gru.b_hh", {3 * h});
    add("dense.weight", {config.dense, h});
    add("dense.bias", {config.dense});
    add("out.weight", {2, config.dense});
    add("out.bias", {2});
    return p;
  }

  /// Fan-in scaled uniform for conv and dense layers, orthogonal recurrent blocks,
  /// PReLU slopes 0.25, zero recurrent biases.
  static ModelParams initialize(const CrnConfig& config, std::uint64_t seed) {
    ModelParams p = zeros(config);
    std::mt19937_64 rng(derive_seed(seed, 0x1417));
    auto uniform = [&](Tensor& t, double bound) {
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& x : t.data) x = u(rng);
    };
    std::size_t in = 1;
    for (std::size_t b = 0; b < config.blocks(); ++b) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in * 9));
      uniform(p.tensors[p.conv_weight(b)], bound);
      uniform(p.tensors[p.conv_bias(b)], bound);
      std::fill(p.tensors[p.prelu_slope(b)].data.begin(), p.tensors[p.prelu_slope(b)].data.end(), 0.25);
      in = config.conv_channels[b];
    }
    const std::size_t h = config.hidden;
    uniform(p.tensors[p.gru_w_ih()], 1.0 / std::sqrt(static_cast<double>(config.recurrent_input())));
    // orthogonal H x H block per gate via modified Gram-Schmidt on Gaussian rows
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto& whh = p.tensors[p.gru_w_hh()].data;
    for (std::size_t gate = 0; gate < 3; ++gate) {
      double* block = whh.data() + gate * h * h;
      for (std::size_t i = 0; i < h * h; ++i) block[i] = gauss(rng);
      for (std::size_t i = 0; i < h; ++i) {
        double* ri = block + i * h;
        for (std::size_t j = 0; j < i; ++j) {
          const double* rj = block + j * h;
          double dot = 0.0;
          for (std::size_t k = 0; k < h; ++k) dot += ri[k] * rj[k];
          for (std::size_t k = 0; k < h; ++k) ri[k] -= dot * rj[k];
        }
        double norm = 0.0;
        for (std::size_t k = 0; k < h; ++k) norm += ri[k] * ri[k];
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < h; ++k) ri[k] /= norm;
      }
    }
    const double dense_bound = 1.0 / std::sqrt(static_cast<double>(h));
    uniform(p.tensors[p.dense_weight()], dense_bound);
    uniform(p.tensors[p.dense_bias()], dense_bound);
    const double out_bound = 1.0 / std::sqrt(static_cast<double>(config.dense));
    uniform(p.tensors[p.out_weight()], out_bound);
    uniform(p.tensors[p.out_bias()], out_bound);
    return p;
  }

  ModelParams zeros_like() const {
    ModelParams g = *this;
    for (auto& t : g.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
    return g;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      for (double x : t.data)
        if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// ---------------------------------------------------------------------------
// Forward pass with activation trace

struct ConvTrace {
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t frames = 0, lags = 0;      // spatial size of this block (input == output)
  std::size_t pooled_frames = 0, pooled_lags = 0;
  bool pooled = false;
  std::vector<double> padded_input;      // [in][frames+2][lags+2], zero border
  std::vector<double> pre;               // conv + bias, [out][frames][lags]
  std::vector<double> act;               // PReLU(pre)
  std::vector<std::uint32_t> argmax;     // flat index into act per pooled cell
  std::vector<double> output;            // block output (pooled act, or act for the last block)
};

struct GruTrace {
  std::size_t steps = 0, inputs = 0, hidden = 0;
  std::vector<double> x;                 // [steps][inputs]
  std::vector<double> h;                 // [steps+1][hidden], h[0] = 0
  std::vector<double> r, z, n, hn;       // [steps][hidden]; hn = W_hn h + b_hn
};

struct CrnTrace {
  std::vector<ConvTrace> conv;
  GruTrace gru;
  std::vector<double> mean;              // temporal mean of GRU outputs
  std::vector<double> dense;             // tanh(dense pre-activation)
  DirectionVector output;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y[i] += sum_j a[i*cols + j] * x[j]
inline void gemv_add(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* ai = a + i * cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += ai[j] * x[j];
    y[i] += acc;
  }
}

// y[j] += sum_i a[i*cols + j] * x[i]
inline void gemv_t_add(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* ai = a + i * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] += xi * ai[j];
  }
}

// a[i*cols + j] += x[i] * y[j]
inline void ger_add(double* a, std::size_t rows, std::size_t cols, const double* x, const double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    double* ai = a + i * cols;
    for (std::size_t j = 0; j < cols; ++j) ai[j] += xi * y[j];
  }
}

// Shared shape check for forward and backward.
inline void check_input(const GccFeature& features, const ModelParams& params) {
  params.config.validate();
  if (features.lags() != params.config.input_lags)
    throw Error("crn: feature width " + std::to_string(features.lags()) + " does not match config input_lags " +
                std::to_string(params.config.input_lags));
  if (params.config.output_frames(features.frames) == 0)
    throw Error("crn: " + std::to_string(features.frames) + " frames is too short for the pooling stack");
  const auto expected = ModelParams::zeros(params.config);
  if (expected.tensors.size() != params.tensors.size()) throw Error("crn: parameter tensor count mismatch");
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    if (expected.tensors[i].shape != params.tensors[i].shape || params.tensors[i].data.size() != expected.tensors[i].data.size())
      throw Error("crn: shape mismatch for " + params.tensors[i].name);
}

// 3x3 'same' convolution over a zero-padded input. The output is accumulated in a
// padded-width layout [out][frames][lags+2] so every tap is one long contiguous loop;
// the two trailing columns per row are scratch and ignored.
inline void conv3x3_padded(const double* padded_in, std::size_t in_ch, std::size_t frames, std::size_t lags,
                           const double* kernel, std::size_t out_ch, double* out_wide) {
  const std::size_t pw = lags + 2;
  const std::size_t in_plane = (frames + 2) * pw;
  const std::size_t span = frames * pw - 2;
  for (std::size_t co = 0; co < out_ch; ++co) {
    double* dst = out_wide + co * frames * pw;
    for (std::size_t ci = 0; ci < in_ch; ++ci) {
      const double* src = padded_in + ci * in_plane;
      const double* k = kernel + (co * in_ch + ci) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double w = k[ky * 3 + kx];
          const double* s = src + ky * pw + kx;
          for (std::size_t i = 0; i < span; ++i) dst[i] += w * s[i];
        }
      }
    }
  }
}

}  // namespace detail

/// Forward pass; fills `trace` when given (needed by backward).
inline DirectionVector forward(const GccFeature& features, const ModelParams& params, CrnTrace* trace = nullptr) {
  detail::check_input(features, params);
  const CrnConfig& cfg = params.config;
  CrnTrace local;
  CrnTrace& tr = trace ? *trace : local;
  tr = CrnTrace{};
  tr.conv.resize(cfg.blocks());

  std::vector<double> current(features.values.begin(), features.values.end());
  std::size_t channels = 1, frames = features.frames, lags = features.lags();

  for (std::size_t b = 0; b < cfg.blocks(); ++b) {
    ConvTrace& ct = tr.conv[b];
    const std::size_t out_ch = cfg.conv_channels[b];
    const std::size_t pw = lags + 2, ph = frames + 2;
    ct.in_channels = channels;
    ct.out_channels = out_ch;
    ct.frames = frames;
    ct.lags = lags;
    ct.pooled = b + 1 < cfg.blocks();

    ct.padded_input.assign(channels * ph * pw, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < frames; ++t)
        std::copy_n(current.data() + (c * frames + t) * lags, lags,
                    ct.padded_input.data() + c * ph * pw + (t + 1) * pw + 1);

    std::vector<double> wide(out_ch * frames * pw, 0.0);
    detail::conv3x3_padded(ct.padded_input.data(), channels, frames, lags, params.data(params.conv_weight(b)), out_ch,
                           wide.data());

    const double* bias = params.data(params.conv_bias(b));
    const double* slope = params.data(params.prelu_slope(b));
    ct.pre.resize(out_ch * frames * lags);
    ct.act.resize(out_ch * frames * lags);
    for (std::size_t c = 0; c < out_ch; ++c)
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t w = 0; w < lags; ++w) {
          const double v = wide[(c * frames + t) * pw + w] + bias[c];
          const std::size_t i = (c * frames + t) * lags + w;
          ct.pre[i] = v;
          ct.act[i] = v > 0.0 ? v : slope[c] * v;
        }

    if (ct.pooled) {
      const std::size_t pt = cfg.pool_time, pl = cfg.pool_lag;
      ct.pooled_frames = frames / pt;
      ct.pooled_lags = lags / pl;
      ct.output.resize(out_ch * ct.pooled_frames * ct.pooled_lags);
      ct.argmax.resize(ct.output.size());
      for (std::size_t c = 0; c < out_ch; ++c)
        for (std::size_t t = 0; t < ct.pooled_frames; ++t)
          for (std::size_t w = 0; w < ct.pooled_lags; ++w) {
            std::size_t best = (c * frames + t * pt) * lags + w * pl;
            for (std::size_t dt = 0; dt < pt; ++dt)
              for (std::size_t dw = 0; dw < pl; ++dw) {
                const std::size_t i = (c * frames + t * pt + dt) * lags + w * pl + dw;
                if (ct.act[i] > ct.act[best]) best = i;
              }
            const std::size_t o = (c * ct.pooled_frames + t) * ct.pooled_lags + w;
            ct.output[o] = ct.act[best];
            ct.argmax[o] = static_cast<std::uint32_t>(best);
          }
      frames = ct.pooled_frames;
      lags = ct.pooled_lags;
    } else {
      ct.pooled_frames = frames;
      ct.pooled_lags = lags;
      ct.output = ct.act;
    }
    current = ct.output;
    channels = out_ch;
  }

  // Flatten channel x lag per time step, then the gated recurrence.
  GruTrace& g = tr.gru;
  const std::size_t H = cfg.hidden, D = channels * lags, T = frames;
  g.steps = T;
  g.inputs = D;
  g.hidden = H;
  g.x.resize(T * D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(current.data() + (c * T + t) * lags, lags, g.x.data() + t * D + c * lags);

  g.h.assign((T + 1) * H, 0.0);
  g.r.resize(T * H);
  g.z.resize(T * H);
  g.n.resize(T * H);
  g.hn.resize(T * H);
  const double* w_ih = params.data(params.gru_w_ih());
  const double* w_hh = params.data(params.gru_w_hh());
  const double* b_ih = params.data(params.gru_b_ih());
  const double* b_hh = params.data(params.gru_b_hh());
  std::vector<double> gi(3 * H), gh(3 * H);
  for (std::size_t t = 0; t < T; ++t) {
    std::copy_n(b_ih, 3 * H, gi.data());
    std::copy_n(b_hh, 3 * H, gh.data());
    detail::gemv_add(w_ih, 3 * H, D, g.x.data() + t * D, gi.data());
    const double* hp = g.h.data() + t * H;
    detail::gemv_add(w_hh, 3 * H, H, hp, gh.data());
    double* hnext = g.h.data() + (t + 1) * H;
    for (std::size_t j = 0; j < H; ++j) {
      const double r = detail::sigmoid(gi[j] + gh[j]);
      const double z = detail::sigmoid(gi[H + j] + gh[H + j]);
      const double n = std::tanh(gi[2 * H + j] + r * gh[2 * H + j]);
      g.r[t * H + j] = r;
      g.z[t * H + j] = z;
      g.n[t * H + j] = n;
      g.hn[t * H + j] = gh[2 * H + j];
      hnext[j] = (1.0 - z) * n + z * hp[j];
    }
  }

  tr.mean.assign(H, 0.0);
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t j = 0; j < H; ++j) tr.mean[j] += g.h[t * H + j];
  for (auto& m : tr.mean) m /= static_cast<double>(T);

  tr.dense.assign(params.data(params.dense_bias()), params.data(params.dense_bias()) + cfg.dense);
  detail::gemv_add(params.data(params.dense_weight()), cfg.dense, H, tr.mean.data(), tr.dense.data());
  for (auto& u : tr.dense) u = std::tanh(u);

  double out[2] = {params.data(params.out_bias())[0], params.data(params.out_bias())[1]};
  detail::gemv_add(params.data(params.out_weight()), 2, cfg.dense, tr.dense.data(), out);
  tr.output = {out[0], out[1]};
  return tr.output;
}

// ---------------------------------------------------------------------------
// Reverse-mode gradients

struct BackwardResult {
  double loss = 0.0;
  DirectionVector output;
  ModelParams grads;
};

/// Backpropagate `d_output` (d loss / d network output) through a recorded trace.
inline ModelParams backward_from_trace(const CrnTrace& tr, const ModelParams& params, DirectionVector d_output) {
  const CrnConfig& cfg = params.config;
  ModelParams grads = params.zeros_like();
  const std::size_t H = cfg.hidden, Hd = cfg.dense;

  // output affine
  const double dout[2] = {d_output.x, d_output.y};
  detail::ger_add(grads.data(grads.out_weight()), 2, Hd, dout, tr.dense.data());
  grads.data(grads.out_bias())[0] += dout[0];
  grads.data(grads.out_bias())[1] += dout[1];
  std::vector<double> d_dense(Hd, 0.0);
  detail::gemv_t_add(params.data(params.out_weight()), 2, Hd, dout, d_dense.data());

  // tanh dense
  for (std::size_t i = 0; i < Hd; ++i) d_dense[i] *= 1.0 - tr.dense[i] * tr.dense[i];
  detail::ger_add(grads.data(grads.dense_weight()), Hd, H, d_dense.data(), tr.mean.data());
  for (std::size_t i = 0; i < Hd; ++i) grads.data(grads.dense_bias())[i] += d_dense[i];
  std::vector<double> d_mean(H, 0.0);
  detail::gemv_t_add(params.data(params.dense_weight()), Hd, H, d_dense.data(), d_mean.data());

  // GRU through time
  const GruTrace& g = tr.gru;
  const std::size_t T = g.steps, D = g.inputs;
  const double inv_t = 1.0 / static_cast<double>(T);
  const double* w_ih = params.data(params.gru_w_ih());
  const double* w_hh = params.data(params.gru_w_hh());
  double* dw_ih = grads.data(grads.gru_w_ih());
  double* dw_hh = grads.data(grads.gru_w_hh());
  double* db_ih = grads.data(grads.gru_b_ih());
  double* db_hh = grads.data(grads.gru_b_hh());
  std::vector<double> dx(T * D, 0.0);
  std::vector<double> dh(H, 0.0), dh_prev(H), dgi(3 * H), dgh(3 * H);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t j = 0; j < H; ++j) dh[j] += d_mean[j] * inv_t;
    const double* hp = g.h.data() + t * H;
    for (std::size_t j = 0; j < H; ++j) {
      const double r = g.r[t * H + j], z = g.z[t * H + j], n = g.n[t * H + j];
      const double dn = dh[j] * (1.0 - z);
      const double dz = dh[j] * (hp[j] - n);
      dh_prev[j] = dh[j] * z;
      const double dn_pre = dn * (1.0 - n * n);
      const double dr = dn_pre * g.hn[t * H + j];
      const double dr_pre = dr * r * (1.0 - r);
      const double dz_pre = dz * z * (1.0 - z);
      dgi[j] = dr_pre;
      dgi[H + j] = dz_pre;
      dgi[2 * H + j] = dn_pre;
      dgh[j] = dr_pre;
      dgh[H + j] = dz_pre;
      dgh[2 * H + j] = dn_pre * r;
    }
    detail::ger_add(dw_ih, 3 * H, D, dgi.data(), g.x.data() + t * D);
    detail::ger_add(dw_hh, 3 * H, H, dgh.data(), hp);
    for (std::size_t i = 0; i < 3 * H; ++i) {
      db_ih[i] += dgi[i];
      db_hh[i] += dgh[i];
    }
    detail::gemv_t_add(w_ih, 3 * H, D, dgi.data(), dx.data() + t * D);
    detail::gemv_t_add(w_hh, 3 * H, H, dgh.data(), dh_prev.data());
    std::swap(dh, dh_prev);
  }

  // un-flatten into the last conv block's output layout [c][t][w]
  const ConvTrace& last = tr.conv.back();
  std::vector<double> d_out(last.output.size(), 0.0);
  {
    const std::size_t lags = last.pooled_lags;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < last.out_channels; ++c)
        std::copy_n(dx.data() + t * D + c * lags, lags, d_out.data() + (c * T + t) * lags);
  }

  for (std::size_t b = cfg.blocks(); b-- > 0;) {
    const ConvTrace& ct = tr.conv[b];
    const std::size_t frames = ct.frames, lags = ct.lags, pw = lags + 2, ph = frames + 2;
    std::vector<double> d_act;
    if (ct.pooled) {
      d_act.assign(ct.act.size(), 0.0);
      for (std::size_t o = 0; o < d_out.size(); ++o) d_act[ct.argmax[o]] += d_out[o];
    } else {
      d_act = std::move(d_out);
    }

    const double* slope = params.data(params.prelu_slope(b));
    double* d_slope = grads.data(grads.prelu_slope(b));
    double* d_bias = grads.data(grads.conv_bias(b));
    // d_pre in padded-width layout, scratch columns zero
    std::vector<double> d_wide(ct.out_channels * frames * pw, 0.0);
    for (std::size_t c = 0; c < ct.out_channels; ++c)
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t w = 0; w < lags; ++w) {
          const std::size_t i = (c * frames + t) * lags + w;
          const double pre = ct.pre[i];
          double dp;
          if (pre > 0.0) {
            dp = d_act[i];
          } else {
            dp = d_act[i] * slope[c];
            d_slope[c] += d_act[i] * pre;
          }
          d_bias[c] += dp;
          d_wide[(c * frames + t) * pw + w] = dp;
        }

    const double* kernel = params.data(params.conv_weight(b));
    double* d_kernel = grads.data(grads.conv_weight(b));
    const bool need_input_grad = b > 0;
    std::vector<double> d_padded(need_input_grad ? ct.in_channels * ph * pw : 0, 0.0);
    const std::size_t span = frames * pw - 2;
    for (std::size_t co = 0; co < ct.out_channels; ++co) {
      const double* dsrc = d_wide.data() + co * frames * pw;
      for (std::size_t ci = 0; ci < ct.in_channels; ++ci) {
        const double* in = ct.padded_input.data() + ci * ph * pw;
        double* din = need_input_grad ? d_padded.data() + ci * ph * pw : nullptr;
        const double* k = kernel + (co * ct.in_channels + ci) * 9;
        double* dk = d_kernel + (co * ct.in_channels + ci) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::size_t off = ky * pw + kx;
            const double* s = in + off;
            double acc = 0.0;
            for (std::size_t i = 0; i < span; ++i) acc += dsrc[i] * s[i];
            dk[ky * 3 + kx] += acc;
            if (din) {
              const double w = k[ky * 3 + kx];
              double* d = din + off;
              for (std::size_t i = 0; i < span; ++i) d[i] += w * dsrc[i];
            }
          }
      }
    }

    if (need_input_grad) {
      d_out.assign(ct.in_channels * frames * lags, 0.0);
      for (std::size_t c = 0; c < ct.in_channels; ++c)
        for (std::size_t t = 0; t < frames; ++t)
          std::copy_n(d_padded.data() + c * ph * pw + (t + 1) * pw + 1, lags, d_out.data() + (c * frames + t) * lags);
    }
  }
  return grads;
}

/// Loss and exact gradients for one example. A degenerate (zero) network output
/// yields loss 1 and zero gradients rather than an error, so training can proceed.
inline BackwardResult backward(const GccFeature& features, const ModelParams& params, const DirectionVector& v_true) {
  CrnTrace trace;
  BackwardResult result;
  result.output = forward(features, params, &trace);
  if (result.output.is_degenerate()) {
    result.loss = 1.0;
    result.grads = params.zeros_like();
    return result;
  }
  result.loss = abs_cosine_loss(v_true, result.output);
  result.grads = backward_from_trace(trace, params, abs_cosine_loss_gradient(v_true, result.output));
  return result;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& p) {
    AdamState s;
    for (const auto& t : p.tensors) {
      s.m.emplace_back(t.data.size(), 0.0);
      s.v.emplace_back(t.data.size(), 0.0);
    }
    return s;
  }
};

/// One bias-corrected Adam update, in place.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.tensors.size() != params.tensors.size() || state.m.size() != params.tensors.size())
    throw Error("adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    if (grads.tensors[i].data.size() != params.tensors[i].data.size() ||
        state.m[i].size() != params.tensors[i].data.size())
      throw Error("adam_step: shape mismatch for " + params.tensors[i].name);

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i].data;
    const auto& g = grads.tensors[i].data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

inline double global_norm(const ModelParams& grads) {
  double acc = 0.0;
  for (const auto& t : grads.tensors)
    for (double x : t.data) acc += x * x;
  return std::sqrt(acc);
}

/// Rescale so the global L2 norm is at most `max_norm`. Returns the pre-clip norm.
inline double clip_global_norm(ModelParams& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& t : grads.tensors)
      for (auto& x : t.data) x *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Shape table

struct LayerShape {
  std::string layer;
  std::vector<std::size_t> output_shape;
  std::size_t parameters = 0;
};

inline std::vector<LayerShape> describe(const CrnConfig& cfg, std::size_t input_frames) {
  cfg.validate();
  std::vector<LayerShape> rows;
  rows.push_back({"input", {1, input_frames, cfg.input_lags}, 0});
  std::size_t ch = 1, t = input_frames, w = cfg.input_lags;
  for (std::size_t b = 0; b < cfg.blocks(); ++b) {
    const std::size_t out = cfg.conv_channels[b];
    rows.push_back({"conv" + std::to_string(b) + "+prelu", {out, t, w}, out * ch * 9 + 2 * out});
    if (b + 1 < cfg.blocks()) {
      t /= cfg.pool_time;
      w /= cfg.pool_lag;
      rows.push_back({"maxpool" + std::to_string(b), {out, t, w}, 0});
    }
    ch = out;
  }
  const std::size_t d = ch * w, h = cfg.hidden;
  rows.push_back({"flatten", {t, d}, 0});
  rows.push_back({"gru", {t, h}, 3 * (h * d + h * h + 2 * h)});
  rows.push_back({"temporal_mean", {h}, 0});
  rows.push_back({"dense+tanh", {cfg.dense}, cfg.dense * h + cfg.dense});
  rows.push_back({"output", {2}, 2 * cfg.dense + 2});
  return rows;
}

inline std::string format_shape_table(const std::vector<LayerShape>& rows) {
  std::ostringstream os;
  std::size_t total = 0;
  os << std::left << std::setw(16) << "layer" << std::setw(20) << "output" << "params\n";
  for (const auto& r : rows) {
    std::string shape = "(";
    for (std::size_t i = 0; i < r.output_shape.size(); ++i)
      shape += (i ? ", " : "") + std::to_string(r.output_shape[i]);
    shape += ")";
    os << std::setw(16) << r.layer << std::setw(20) << shape << r.parameters << '\n';
    total += r.parameters;
  }
  os << "total parameters: " << total << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   "BLCRNCK1" | u32 header_bytes | JSON header {format_version, config}
//   | u32 tensor_count | per tensor: u32 name_len, name, u32 ndim, u64 dims[ndim],
//   f64 little-endian values

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("checkpoint: truncated file");
  return v;
}
}  // namespace detail

inline void save_checkpoint(const ModelParams& params, std::ostream& out) {
  nlohmann::json header{{"format_version", kCheckpointVersion}, {"config", params.config}, {"model", "crn"}};
  const std::string h = header.dump();
  out.write("BLCRNCK1", 8);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::write_pod<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
}

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  save_checkpoint(params, out);
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

inline ModelParams load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "BLCRNCK1", 8) != 0) throw Error("checkpoint: bad magic");
  const auto hlen = detail::read_pod<std::uint32_t>(in);
  std::string h(hlen, '\0');
  if (!in.read(h.data(), hlen)) throw Error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(h);
  if (header.at("format_version").get<std::uint32_t>() != kCheckpointVersion)
    throw Error("checkpoint: unsupported format version");
  ModelParams params = ModelParams::zeros(header.at("config").get<CrnConfig>());
  const auto count = detail::read_pod<std::uint32_t>(in);
  if (count != params.tensors.size()) throw Error("checkpoint: tensor count does not match config");
  for (auto& t : params.tensors) {
    const auto nlen = detail::read_pod<std::uint32_t>(in);
    std::string name(nlen, '\0');
    if (!in.read(name.data(), nlen)) throw Error("checkpoint: truncated tensor name");
    if (name != t.name) throw Error("checkpoint: expected tensor " + t.name + ", found " + name);
    const auto ndim = detail::read_pod<std::uint32_t>(in);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(in));
    if (shape != t.shape) throw Error("checkpoint: shape mismatch for " + name);
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double))))
      throw Error("checkpoint: truncated data for " + name);
  }
  if (!params.all_finite()) throw Error("checkpoint: non-finite parameter values");
  return params;
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  return load_checkpoint(in);
}

/// Network azimuth estimate for one feature matrix.
inline double crn_azimuth(const GccFeature& features, const ModelParams& params) {
  const auto v = forward(features, params);
  return v.is_degenerate() ? 0.0 : vector_to_azimuth(v);
}

}  // namespace binloc
