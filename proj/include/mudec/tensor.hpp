#pragma once

#include "mudec/signal.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace mudec::tensor {

/// 64-byte-aligned storage for everything Eigen maps over. Eigen's vectorized
/// reductions peel scalar work up to the first aligned element, so results on
/// unaligned buffers would depend on where malloc happened to place them;
/// a fixed alignment keeps every run (and every re-run) bit-identical.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <class T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

template <class T>
struct TensorData {
  std::vector<Eigen::Index> shape;
  AlignedVec<T> values;
  AlignedVec<T> grad;  // sized on demand, always matches values when present
  bool requires_grad = false;

  Eigen::Index size() const {
    return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                           std::multiplies<Eigen::Index>());
  }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <class T>
using TensorPtr = std::shared_ptr<TensorData<T>>;

template <class T>
TensorPtr<T> make_tensor(std::vector<Eigen::Index> shape, bool requires_grad = false) {
  auto t = std::make_shared<TensorData<T>>();
  t->shape = std::move(shape);
  t->values.assign(static_cast<size_t>(t->size()), T(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->ensure_grad();
  return t;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

/// Reverse-mode tape. Ops append nodes in execution order; backward() replays
/// the tape in reverse, so every grad-requiring node is visited exactly once.
template <class T>
class Graph {
 public:
  struct Node {
    std::function<void()> backward;
  };

  TensorPtr<T> leaf(std::vector<Eigen::Index> shape, bool requires_grad = false) {
    return make_tensor<T>(std::move(shape), requires_grad);
  }

  /// Batch mode: treat the time axis as `len`-sample windows laid side by
  /// side. Convolutions and recurrences reset at every window boundary, so a
  /// stacked batch computes exactly what per-window passes would. 0 restores
  /// single-window behavior.
  void set_window_len(Eigen::Index len) {
    if (len < 0) throw ParameterError("set_window_len: negative length");
    window_len_ = len;
  }

 private:
  Eigen::Index window_of(Eigen::Index t_len) const {
    if (window_len_ == 0) return t_len;
    if (t_len % window_len_ != 0)
      throw ParameterError("Graph: time axis is not a whole number of windows");
    return window_len_;
  }

 public:

  // -- causal dilated convolution --------------------------------------------
  // y_c(t) = sum_j sum_l w[c,j,l] * x_j(t - d*l), x_j(tau) = 0 for tau < 0.
  TensorPtr<T> causal_conv1d(const TensorPtr<T>& x, const TensorPtr<T>& w,
                             const TensorPtr<T>& bias, Eigen::Index dilation) {
    if (x->shape.size() != 2 || w->shape.size() != 3)
      throw ParameterError("causal_conv1d: expected x[Cin×T], w[Cout×Cin×k]");
    const Eigen::Index c_in = x->shape[0], t_len = x->shape[1];
    const Eigen::Index c_out = w->shape[0], k = w->shape[2];
    if (w->shape[1] != c_in) throw ParameterError("causal_conv1d: channel mismatch");
    if (bias && bias->size() != c_out) throw ParameterError("causal_conv1d: bias size mismatch");
    if (dilation < 1) throw ParameterError("causal_conv1d: dilation must be >= 1");

    auto out = make_tensor<T>({c_out, t_len});
    out->requires_grad = x->requires_grad || w->requires_grad ||
                         (bias && bias->requires_grad);

    const Eigen::Index win = window_of(t_len);
    auto col = std::make_shared<RowMat<T>>(im2col(*x, k, dilation, win));
    {
      CMapMat<T> wm(w->values.data(), c_out, c_in * k);
      MapMat<T> ym(out->values.data(), c_out, t_len);
      // One GEMM per window: Eigen's GEMM results differ in the last bit with
      // the column count, and batched evaluation must match the single-window
      // pass exactly.
      for (Eigen::Index w0 = 0; w0 < t_len; w0 += win)
        ym.middleCols(w0, win).noalias() = wm * col->middleCols(w0, win);
      if (bias)
        for (Eigen::Index c = 0; c < c_out; ++c)
          ym.row(c).array() += bias->values[static_cast<size_t>(c)];
    }

    if (out->requires_grad) {
      out->ensure_grad();
      // `col` is kept for the weight gradient instead of recomputing im2col.
      tape_.push_back({[x, w, bias, out, dilation, col, win]() {
        const Eigen::Index c_in = x->shape[0], t_len = x->shape[1];
        const Eigen::Index c_out = w->shape[0], k = w->shape[2];
        CMapMat<T> gy(out->grad.data(), c_out, t_len);
        if (w->requires_grad) {
          w->ensure_grad();
          MapMat<T> gw(w->grad.data(), c_out, c_in * k);
          gw.noalias() += gy * col->transpose();
        }
        if (bias && bias->requires_grad) {
          bias->ensure_grad();
          for (Eigen::Index c = 0; c < c_out; ++c)
            bias->grad[static_cast<size_t>(c)] += gy.row(c).sum();
        }
        if (x->requires_grad) {
          x->ensure_grad();
          CMapMat<T> wm(w->values.data(), c_out, c_in * k);
          RowMat<T> gcol(c_in * k, t_len);
          gcol.noalias() = wm.transpose() * gy;
          MapMat<T> gx(x->grad.data(), c_in, t_len);
          for (Eigen::Index w0 = 0; w0 < t_len; w0 += win)
            for (Eigen::Index j = 0; j < c_in; ++j)
              for (Eigen::Index l = 0; l < k; ++l) {
                const Eigen::Index off = dilation * l;
                if (off >= win) break;
                gx.row(j).segment(w0, win - off) +=
                    gcol.row(j * k + l).segment(w0 + off, win - off);
              }
        }
      }});
    }
    return out;
  }

  // -- pointwise ops ----------------------------------------------------------
  TensorPtr<T> relu(const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    out->requires_grad = x->requires_grad;
    for (size_t i = 0; i < x->values.size(); ++i)
      out->values[i] = x->values[i] > T(0) ? x->values[i] : T(0);
    if (out->requires_grad) {
      out->ensure_grad();
      tape_.push_back({[x, out]() {
        x->ensure_grad();
        for (size_t i = 0; i < x->values.size(); ++i)
          if (x->values[i] > T(0)) x->grad[i] += out->grad[i];
      }});
    }
    return out;
  }

  TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape) throw ParameterError("add: shape mismatch");
    auto out = make_tensor<T>(a->shape);
    out->requires_grad = a->requires_grad || b->requires_grad;
    for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (out->requires_grad) {
      out->ensure_grad();
      tape_.push_back({[a, b, out]() {
        if (a->requires_grad) {
          a->ensure_grad();
          for (size_t i = 0; i < a->values.size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
          b->ensure_grad();
          for (size_t i = 0; i < b->values.size(); ++i) b->grad[i] += out->grad[i];
        }
      }});
    }
    return out;
  }

  TensorPtr<T> mul_scalar(const TensorPtr<T>& x, T c) {
    auto out = make_tensor<T>(x->shape);
    out->requires_grad = x->requires_grad;
    for (size_t i = 0; i < x->values.size(); ++i) out->values[i] = c * x->values[i];
    if (out->requires_grad) {
      out->ensure_grad();
      tape_.push_back({[x, out, c]() {
        x->ensure_grad();
        for (size_t i = 0; i < x->values.size(); ++i) x->grad[i] += c * out->grad[i];
      }});
    }
    return out;
  }

  // -- layer norm over the channel axis, per time step ------------------------
  TensorPtr<T> layer_norm_channels(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                                   const TensorPtr<T>& beta, T eps = T(1e-5)) {
    if (x->shape.size() != 2) throw ParameterError("layer_norm: expected x[C×T]");
    const Eigen::Index c_n = x->shape[0], t_len = x->shape[1];
    if (gamma->size() != c_n || beta->size() != c_n)
      throw ParameterError("layer_norm: scale/shift size mismatch");

    auto out = make_tensor<T>(x->shape);
    out->requires_grad = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    auto xhat = std::make_shared<AlignedVec<T>>(x->values.size());
    auto inv_std = std::make_shared<AlignedVec<T>>(static_cast<size_t>(t_len));

    CMapMat<T> xm(x->values.data(), c_n, t_len);
    MapMat<T> ym(out->values.data(), c_n, t_len);
    MapMat<T> xh(xhat->data(), c_n, t_len);
    {
      const Eigen::Array<T, 1, Eigen::Dynamic> mean = xm.colwise().mean().array();
      xh = xm.rowwise() - mean.matrix();
      Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> is(inv_std->data(), t_len);
      // sqrt + divide instead of rsqrt: Eigen's packet rsqrt is approximate
      // and would make results depend on buffer alignment via scalar peeling.
      is = (xh.array().square().colwise().mean() + eps).sqrt().inverse();
      xh.array().rowwise() *= is;
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> ga(gamma->values.data(), c_n);
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> be(beta->values.data(), c_n);
      ym.array() = (xh.array().colwise() * ga).colwise() + be;
    }

    if (out->requires_grad) {
      out->ensure_grad();
      tape_.push_back({[x, gamma, beta, out, xhat, inv_std]() {
        const Eigen::Index c_n = x->shape[0], t_len = x->shape[1];
        CMapMat<T> gy(out->grad.data(), c_n, t_len);
        CMapMat<T> xh(xhat->data(), c_n, t_len);
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          for (Eigen::Index c = 0; c < c_n; ++c)
            gamma->grad[static_cast<size_t>(c)] += (gy.row(c).array() * xh.row(c).array()).sum();
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          for (Eigen::Index c = 0; c < c_n; ++c)
            beta->grad[static_cast<size_t>(c)] += gy.row(c).sum();
        }
        if (x->requires_grad) {
          x->ensure_grad();
          MapMat<T> gx(x->grad.data(), c_n, t_len);
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> ga(gamma->values.data(), c_n);
          Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> is(inv_std->data(), t_len);
          const RowMat<T> g = (gy.array().colwise() * ga).matrix();
          const Eigen::Array<T, 1, Eigen::Dynamic> mean_g = g.colwise().mean().array();
          const Eigen::Array<T, 1, Eigen::Dynamic> mean_gx =
              (g.array() * xh.array()).colwise().mean();
          gx.array() += (((g.array().rowwise() - mean_g) -
                          (xh.array().rowwise() * mean_gx)).rowwise() * is);
        }
      }});
    }
    return out;
  }

  // -- dropout -----------------------------------------------------------------
  // Eval mode is identity. Train mode scales kept units by 1/(1-p); the mask is
  // treated as a constant for differentiation.
  TensorPtr<T> dropout(const TensorPtr<T>& x, double p, bool train_mode,
                       std::mt19937_64* rng) {
    if (p < 0.0 || p >= 1.0) throw ParameterError("dropout: p must lie in [0,1)");
    if (!train_mode || p == 0.0) return x;
    if (!rng) throw ParameterError("dropout: train mode requires an RNG");
    auto out = make_tensor<T>(x->shape);
    out->requires_grad = x->requires_grad;
    auto mask = std::make_shared<std::vector<T>>(x->values.size());
    std::bernoulli_distribution keep(1.0 - p);
    const T scale = T(1.0 / (1.0 - p));
    for (size_t i = 0; i < x->values.size(); ++i) {
      (*mask)[i] = keep(*rng) ? scale : T(0);
      out->values[i] = (*mask)[i] * x->values[i];
    }
    if (out->requires_grad) {
      out->ensure_grad();
      tape_.push_back({[x, out, mask]() {
        x->ensure_grad();
        for (size_t i = 0; i < x->values.size(); ++i) x->grad[i] += (*mask)[i] * out->grad[i];
      }});
    }
    return out;
  }

  // -- leaky integrate-and-fire ------------------------------------------------
  // v_t = beta * v_{t-1} + I_t - v_th * s_{t-1};  s_t = H(v_t - v_th).
  // The backward pass substitutes the surrogate d s/d v = 1/(1 + k|v - v_th|)^2
  // and carries BPTT through both the decay and the reset term.
  struct LifOutput {
    TensorPtr<T> spikes;
    TensorPtr<T> membrane;
  };
  LifOutput lif_forward(const TensorPtr<T>& input, T beta_m, T v_th, T surrogate_slope) {
    if (input->shape.size() != 2) throw ParameterError("lif_forward: expected I[C×T]");
    if (!(beta_m > T(0) && beta_m < T(1))) throw ParameterError("lif_forward: beta_m in (0,1)");
    if (!(v_th > T(0))) throw ParameterError("lif_forward: v_th must be positive");
    const Eigen::Index c_n = input->shape[0], t_len = input->shape[1];
    const Eigen::Index win = window_of(t_len);

    LifOutput out;
    out.spikes = make_tensor<T>(input->shape);
    out.membrane = make_tensor<T>(input->shape);
    out.spikes->requires_grad = input->requires_grad;
    out.membrane->requires_grad = input->requires_grad;

    CMapMat<T> im(input->values.data(), c_n, t_len);
    MapMat<T> sm(out.spikes->values.data(), c_n, t_len);
    MapMat<T> vm(out.membrane->values.data(), c_n, t_len);
    for (Eigen::Index c = 0; c < c_n; ++c) {
      T v = T(0), s = T(0);
      for (Eigen::Index t = 0; t < t_len; ++t) {
        if (t % win == 0) { v = T(0); s = T(0); }
        v = beta_m * v + im(c, t) - v_th * s;
        s = v >= v_th ? T(1) : T(0);
        vm(c, t) = v;
        sm(c, t) = s;
      }
    }

    if (input->requires_grad) {
      out.spikes->ensure_grad();
      out.membrane->ensure_grad();
      auto spikes = out.spikes;
      auto membrane = out.membrane;
      tape_.push_back({[input, spikes, membrane, beta_m, v_th, surrogate_slope, win]() {
        input->ensure_grad();
        const Eigen::Index c_n = input->shape[0], t_len = input->shape[1];
        CMapMat<T> gs(spikes->grad.data(), c_n, t_len);
        CMapMat<T> gvm(membrane->grad.data(), c_n, t_len);
        CMapMat<T> vm(membrane->values.data(), c_n, t_len);
        MapMat<T> gi(input->grad.data(), c_n, t_len);
        for (Eigen::Index c = 0; c < c_n; ++c) {
          T carry = T(0);  // dL/dv_{t+1} accumulated along the recurrence
          for (Eigen::Index t = t_len - 1; t >= 0; --t) {
            // The recurrence restarts at each window boundary, so the last
            // sample of a window has no successor.
            const bool has_next = (t + 1) % win != 0;
            // s_t feeds the readout (gs) and the reset of v_{t+1}.
            const T gs_total = gs(c, t) - (has_next ? v_th * carry : T(0));
            const T phi =
                T(1) / ((T(1) + surrogate_slope * std::abs(vm(c, t) - v_th)) *
                        (T(1) + surrogate_slope * std::abs(vm(c, t) - v_th)));
            const T gv = gvm(c, t) + gs_total * phi +
                         (has_next ? beta_m * carry : T(0));
            gi(c, t) += gv;
            carry = gv;
          }
        }
      }});
    }
    return out;
  }

  // -- synaptic readout ---------------------------------------------------------
  // y_t = alpha * y_{t-1} + (1 - alpha) * s_t, alpha = sigmoid(alpha_param).
  TensorPtr<T> synaptic_readout(const TensorPtr<T>& s, const TensorPtr<T>& alpha_param) {
    if (s->shape.size() != 2) throw ParameterError("synaptic_readout: expected s[C×T]");
    if (alpha_param->size() != 1)
      throw ParameterError("synaptic_readout: alpha_param must be a scalar");
    const Eigen::Index c_n = s->shape[0], t_len = s->shape[1];
    const Eigen::Index win = window_of(t_len);
    const T p = alpha_param->values[0];
    const T alpha = T(1) / (T(1) + std::exp(-p));

    auto out = make_tensor<T>(s->shape);
    out->requires_grad = s->requires_grad || alpha_param->requires_grad;
    CMapMat<T> sm(s->values.data(), c_n, t_len);
    MapMat<T> ym(out->values.data(), c_n, t_len);
    for (Eigen::Index c = 0; c < c_n; ++c) {
      T y = T(0);
      for (Eigen::Index t = 0; t < t_len; ++t) {
        if (t % win == 0) y = T(0);
        y = alpha * y + (T(1) - alpha) * sm(c, t);
        ym(c, t) = y;
      }
    }

    if (out->requires_grad) {
      out->ensure_grad();
      tape_.push_back({[s, alpha_param, out, alpha, win]() {
        const Eigen::Index c_n = s->shape[0], t_len = s->shape[1];
        CMapMat<T> gy(out->grad.data(), c_n, t_len);
        CMapMat<T> ym(out->values.data(), c_n, t_len);
        CMapMat<T> sm(s->values.data(), c_n, t_len);
        T g_alpha = T(0);
        if (s->requires_grad) s->ensure_grad();
        for (Eigen::Index c = 0; c < c_n; ++c) {
          T carry = T(0);
          for (Eigen::Index t = t_len - 1; t >= 0; --t) {
            const bool has_next = (t + 1) % win != 0;
            const T g = gy(c, t) + (has_next ? alpha * carry : T(0));
            if (s->requires_grad) {
              MapMat<T> gs(s->grad.data(), c_n, t_len);
              gs(c, t) += (T(1) - alpha) * g;
            }
            const T y_prev = t % win != 0 ? ym(c, t - 1) : T(0);
            g_alpha += g * (y_prev - sm(c, t));
            carry = g;
          }
        }
        if (alpha_param->requires_grad) {
          alpha_param->ensure_grad();
          alpha_param->grad[0] += g_alpha * alpha * (T(1) - alpha);
        }
      }});
    }
    return out;
  }

  // -- loss ----------------------------------------------------------------------
  /// Mean squared error over all elements; target is a constant.
  TensorPtr<T> mse(const TensorPtr<T>& pred, const TensorPtr<T>& target) {
    if (pred->shape != target->shape) throw ParameterError("mse: shape mismatch");
    auto out = make_tensor<T>({1});
    out->requires_grad = pred->requires_grad || target->requires_grad;
    T acc = T(0);
    for (size_t i = 0; i < pred->values.size(); ++i) {
      const T d = pred->values[i] - target->values[i];
      acc += d * d;
    }
    out->values[0] = acc / T(pred->values.size());
    if (!std::isfinite(static_cast<double>(out->values[0])))
      throw NumericalError("mse: non-finite loss");
    if (out->requires_grad) {
      out->ensure_grad();
      tape_.push_back({[pred, target, out]() {
        const T scale = T(2) * out->grad[0] / T(pred->values.size());
        if (pred->requires_grad) {
          pred->ensure_grad();
          for (size_t i = 0; i < pred->values.size(); ++i)
            pred->grad[i] += scale * (pred->values[i] - target->values[i]);
        }
        if (target->requires_grad) {
          target->ensure_grad();
          for (size_t i = 0; i < target->values.size(); ++i)
            target->grad[i] -= scale * (pred->values[i] - target->values[i]);
        }
      }});
    }
    return out;
  }

  /// Reverse accumulation from a scalar loss. Seeds d loss/d loss = seed
  /// (useful for averaging losses over a batch without a joint graph).
  void backward(const TensorPtr<T>& loss, T seed = T(1)) {
    if (loss->size() != 1) throw ParameterError("backward: loss must be scalar");
    if (!loss->requires_grad)
      throw ParameterError("backward: loss does not require gradients");
    loss->ensure_grad();
    loss->grad[0] += seed;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) it->backward();
    tape_.clear();
  }

  size_t tape_size() const { return tape_.size(); }

 private:
  static RowMat<T> im2col(const TensorData<T>& x, Eigen::Index k, Eigen::Index dilation,
                          Eigen::Index win) {
    const Eigen::Index c_in = x.shape[0], t_len = x.shape[1];
    RowMat<T> col = RowMat<T>::Zero(c_in * k, t_len);
    CMapMat<T> xm(x.values.data(), c_in, t_len);
    for (Eigen::Index w0 = 0; w0 < t_len; w0 += win)
      for (Eigen::Index j = 0; j < c_in; ++j)
        for (Eigen::Index l = 0; l < k; ++l) {
          const Eigen::Index off = dilation * l;
          if (off >= win) break;
          col.row(j * k + l).segment(w0 + off, win - off) =
              xm.row(j).segment(w0, win - off);
        }
    return col;
  }

  std::vector<Node> tape_;
  Eigen::Index window_len_ = 0;
};

}  // namespace mudec::tensor
