#pragma once

#include "mudec/dsp.hpp"
#include "mudec/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mudec::models {

using tensor::Graph;
using tensor::TensorPtr;

struct TcnConfig {
  int in_features = 2;
  int width = 64;
  int kernel = 9;
  std::vector<int> dilations = {1, 2, 4, 8, 16, 32};
  double dropout = 0.1;

  void validate() const {
    if (in_features < 1 || width < 1 || kernel < 1)
      throw ParameterError("TcnConfig: dimensions must be positive");
    if (dilations.empty()) throw ParameterError("TcnConfig: dilations must be nonempty");
    for (int d : dilations)
      if (d < 1) throw ParameterError("TcnConfig: dilations must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("TcnConfig: dropout in [0,1)");
  }
};

struct SnnConfig {
  int in_features = 2;
  int width = 64;
  int kernel = 9;
  std::vector<int> dilations = {1, 2};  // conv front-end
  double beta_m = 0.90;
  double v_th = 1.0;
  double surrogate_slope = 25.0;
  double alpha_init = 0.9;

  void validate() const {
    if (in_features < 1 || width < 1 || kernel < 1)
      throw ParameterError("SnnConfig: dimensions must be positive");
    if (!(beta_m > 0.0 && beta_m < 1.0)) throw ParameterError("SnnConfig: beta_m in (0,1)");
    if (!(v_th > 0.0)) throw ParameterError("SnnConfig: v_th must be positive");
    if (!(alpha_init > 0.0 && alpha_init < 1.0))
      throw ParameterError("SnnConfig: alpha_init in (0,1)");
  }
};

/// A built decoder: named parameters plus a forward map [F×T] -> [1×T].
/// `rng` is consulted only for dropout masks in train mode.
template <class T>
struct Model {
  std::string arch;
  int in_features = 0;
  std::vector<TensorPtr<T>> params;
  std::vector<std::string> param_names;
  std::function<TensorPtr<T>(Graph<T>&, const TensorPtr<T>&, bool, std::mt19937_64*)> forward;

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p->size();
    return n;
  }
};

// Closed-form architecture arithmetic, kept independent of the builders so the
// tests can cross-check the built models against them.
inline std::int64_t tcn_parameter_count(const TcnConfig& cfg) {
  const std::int64_t w = cfg.width, k = cfg.kernel, f = cfg.in_features;
  std::int64_t n = w * f * k + w;  // stem
  n += static_cast<std::int64_t>(cfg.dilations.size()) *
       (2 * (w * w * k + w) + 2 * w);  // per block: two convs + LayerNorm scale/shift
  n += w + 1;                          // 1x1 head
  return n;
}

inline std::int64_t tcn_receptive_field(const TcnConfig& cfg) {
  std::int64_t rf = 1 + (cfg.kernel - 1);  // stem
  for (int d : cfg.dilations) rf += 2 * (cfg.kernel - 1) * d;
  return rf;
}

inline std::int64_t snn_parameter_count(const SnnConfig& cfg) {
  const std::int64_t w = cfg.width, k = cfg.kernel, f = cfg.in_features;
  return (w * f * k + w) + (w * w * k + w) + 1 /* alpha */ + (w + 1);
}

namespace detail {

template <class T>
TensorPtr<T> conv_param(std::vector<Eigen::Index> shape, Eigen::Index fan_in,
                        std::mt19937_64& rng) {
  auto p = tensor::make_tensor<T>(std::move(shape), true);
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : p->values) v = static_cast<T>(gauss(rng));
  return p;
}

template <class T>
TensorPtr<T> const_param(std::vector<Eigen::Index> shape, T value) {
  auto p = tensor::make_tensor<T>(std::move(shape), true);
  std::fill(p->values.begin(), p->values.end(), value);
  return p;
}

}  // namespace detail

/// Stem conv (F->width, k) -> residual dilated blocks
/// [Conv->ReLU->LayerNorm(channel)->Dropout->Conv, identity skip] -> 1x1 head.
template <class T>
Model<T> build_tcn(const TcnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Model<T> m;
  m.arch = "tcn";
  m.in_features = cfg.in_features;

  auto push = [&m](const std::string& name, TensorPtr<T> p) {
    m.param_names.push_back(name);
    m.params.push_back(std::move(p));
    return m.params.back();
  };

  const Eigen::Index w = cfg.width, k = cfg.kernel, f = cfg.in_features;
  auto stem_w = push("stem.w", detail::conv_param<T>({w, f, k}, f * k, rng));
  auto stem_b = push("stem.b", detail::const_param<T>({w}, T(0)));

  struct Block {
    TensorPtr<T> c1w, c1b, ln_g, ln_b, c2w, c2b;
    Eigen::Index dilation;
  };
  std::vector<Block> blocks;
  for (size_t i = 0; i < cfg.dilations.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    Block b;
    b.dilation = cfg.dilations[i];
    b.c1w = push(p + "conv1.w", detail::conv_param<T>({w, w, k}, w * k, rng));
    b.c1b = push(p + "conv1.b", detail::const_param<T>({w}, T(0)));
    b.ln_g = push(p + "ln.gamma", detail::const_param<T>({w}, T(1)));
    b.ln_b = push(p + "ln.beta", detail::const_param<T>({w}, T(0)));
    b.c2w = push(p + "conv2.w", detail::conv_param<T>({w, w, k}, w * k, rng));
    b.c2b = push(p + "conv2.b", detail::const_param<T>({w}, T(0)));
    blocks.push_back(b);
  }
  auto head_w = push("head.w", detail::conv_param<T>({1, w, 1}, w, rng));
  auto head_b = push("head.b", detail::const_param<T>({1}, T(0)));

  const double dropout_p = cfg.dropout;
  m.forward = [stem_w, stem_b, blocks, head_w, head_b, dropout_p](
                  Graph<T>& g, const TensorPtr<T>& x, bool train, std::mt19937_64* rng_ptr) {
    auto h = g.causal_conv1d(x, stem_w, stem_b, 1);
    for (const auto& b : blocks) {
      auto z = g.causal_conv1d(h, b.c1w, b.c1b, b.dilation);
      z = g.relu(z);
      z = g.layer_norm_channels(z, b.ln_g, b.ln_b);
      z = g.dropout(z, dropout_p, train, rng_ptr);
      z = g.causal_conv1d(z, b.c2w, b.c2b, b.dilation);
      h = g.add(h, z);
    }
    return g.causal_conv1d(h, head_w, head_b, 1);
  };
  return m;
}

/// Conv front-end (two causal convs, ReLU between) -> LIF layer ->
/// learnable-alpha synaptic readout -> 1x1 head.
template <class T>
Model<T> build_snn(const SnnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.dilations.size() != 2)
    throw ParameterError("build_snn: front-end expects exactly two dilations");
  std::mt19937_64 rng(seed);
  Model<T> m;
  m.arch = "snn";
  m.in_features = cfg.in_features;

  auto push = [&m](const std::string& name, TensorPtr<T> p) {
    m.param_names.push_back(name);
    m.params.push_back(std::move(p));
    return m.params.back();
  };

  const Eigen::Index w = cfg.width, k = cfg.kernel, f = cfg.in_features;
  auto f1w = push("front1.w", detail::conv_param<T>({w, f, k}, f * k, rng));
  auto f1b = push("front1.b", detail::const_param<T>({w}, T(0)));
  auto f2w = push("front2.w", detail::conv_param<T>({w, w, k}, w * k, rng));
  auto f2b = push("front2.b", detail::const_param<T>({w}, T(0)));
  // alpha = sigmoid(alpha_param) keeps 0 < alpha < 1.
  const double logit = std::log(cfg.alpha_init / (1.0 - cfg.alpha_init));
  auto alpha = push("readout.alpha_param", detail::const_param<T>({1}, static_cast<T>(logit)));
  auto head_w = push("head.w", detail::conv_param<T>({1, w, 1}, w, rng));
  auto head_b = push("head.b", detail::const_param<T>({1}, T(0)));

  const Eigen::Index d1 = cfg.dilations[0], d2 = cfg.dilations[1];
  const T beta_m = static_cast<T>(cfg.beta_m);
  const T v_th = static_cast<T>(cfg.v_th);
  const T slope = static_cast<T>(cfg.surrogate_slope);
  m.forward = [f1w, f1b, f2w, f2b, alpha, head_w, head_b, d1, d2, beta_m, v_th, slope](
                  Graph<T>& g, const TensorPtr<T>& x, bool /*train*/, std::mt19937_64*) {
    auto h = g.relu(g.causal_conv1d(x, f1w, f1b, d1));
    h = g.relu(g.causal_conv1d(h, f2w, f2b, d2));
    auto lif = g.lif_forward(h, beta_m, v_th, slope);
    auto y = g.synaptic_readout(lif.spikes, alpha);
    return g.causal_conv1d(y, head_w, head_b, 1);
  };
  return m;
}

/// Deterministic eval-mode prediction of one standardized window [F×T];
/// returns the force trace in %MVF when target stats are supplied, otherwise
/// in normalized space.
template <class T>
Eigen::VectorXd predict_window(const Model<T>& model, const Eigen::MatrixXd& window_ft,
                               const dsp::NormStats* target_stats = nullptr) {
  if (window_ft.rows() != model.in_features)
    throw ParameterError("predict_window: expected " + std::to_string(model.in_features) +
                         " features, got " + std::to_string(window_ft.rows()));
  Graph<T> g;
  auto x = g.leaf({window_ft.rows(), window_ft.cols()});
  for (Eigen::Index c = 0; c < window_ft.rows(); ++c)
    for (Eigen::Index t = 0; t < window_ft.cols(); ++t)
      x->values[static_cast<size_t>(c * window_ft.cols() + t)] =
          static_cast<T>(window_ft(c, t));
  auto y = model.forward(g, x, false, nullptr);
  Eigen::VectorXd out(window_ft.cols());
  for (Eigen::Index t = 0; t < out.size(); ++t)
    out(t) = static_cast<double>(y->values[static_cast<size_t>(t)]);
  if (target_stats) out = out.array() * target_stats->std(0) + target_stats->mean(0);
  return out;
}

}  // namespace mudec::models
