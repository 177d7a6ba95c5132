#pragma once

#include "mudec/signal.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

namespace mudec::dsp {

// ---------------------------------------------------------------------------
// Biquad sections and cascade filtering
// ---------------------------------------------------------------------------

/// One second-order IIR section, coefficients normalized so a0 = 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

/// Complex frequency response of a biquad cascade at normalized frequency
/// f_hz / fs_hz.
inline std::complex<double> cascade_response(const std::vector<Biquad>& sos, double f_hz,
                                             double fs_hz) {
  const std::complex<double> z =
      std::exp(std::complex<double>(0.0, -2.0 * std::numbers::pi * f_hz / fs_hz));
  std::complex<double> h(1.0, 0.0);
  for (const Biquad& s : sos) {
    h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z);
  }
  return h;
}

/// Applies a biquad cascade causally (forward only), direct form II transposed,
/// zero initial state, independently per channel.
inline MultiChannelSignal apply_cascade(const MultiChannelSignal& sig,
                                        const std::vector<Biquad>& sos) {
  sig.check_finite("apply_cascade input");
  for (const Biquad& s : sos) {
    // Stability: poles inside the unit circle.
    if (std::abs(s.a2) >= 1.0 || std::abs(s.a1) >= 1.0 + s.a2)
      throw NumericalError("apply_cascade: unstable biquad section (a1=" +
                           std::to_string(s.a1) + ", a2=" + std::to_string(s.a2) + ")");
  }
  Eigen::MatrixXd out = sig.data;
  for (Eigen::Index c = 0; c < out.rows(); ++c) {
    for (const Biquad& s : sos) {
      double z1 = 0.0, z2 = 0.0;
      for (Eigen::Index n = 0; n < out.cols(); ++n) {
        const double x = out(c, n);
        const double y = s.b0 * x + z1;
        z1 = s.b1 * x - s.a1 * y + z2;
        z2 = s.b2 * x - s.a2 * y;
        out(c, n) = y;
      }
    }
  }
  MultiChannelSignal result = MultiChannelSignal::like(sig, std::move(out));
  result.check_finite("apply_cascade output");
  return result;
}

/// RBJ-cookbook notch biquad.
inline Biquad design_notch(double f0_hz, double q, double fs_hz) {
  if (!(f0_hz > 0.0) || f0_hz >= fs_hz / 2.0)
    throw ParameterError("notch: f0 must lie in (0, fs/2)");
  if (!(q > 0.0)) throw ParameterError("notch: Q must be positive");
  const double w0 = 2.0 * std::numbers::pi * f0_hz / fs_hz;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * std::cos(w0) / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * std::cos(w0) / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

enum class FilterKind { highpass, lowpass };

/// Butterworth design as cascaded second-order sections via the bilinear
/// transform with frequency prewarping; the -3 dB point lands on fc exactly.
inline std::vector<Biquad> design_butterworth(FilterKind kind, int order, double fc_hz,
                                              double fs_hz) {
  if (order < 1) throw ParameterError("butterworth: order must be >= 1");
  if (!(fc_hz > 0.0) || fc_hz >= fs_hz / 2.0)
    throw ParameterError("butterworth: fc must lie in (0, fs/2)");
  const double warped = std::tan(std::numbers::pi * fc_hz / fs_hz);

  std::vector<Biquad> sos;
  // Conjugate prototype pole pairs on the unit circle; exp(j*theta_m).
  const int pairs = order / 2;
  for (int m = 0; m < pairs; ++m) {
    const double theta = std::numbers::pi * (2.0 * m + order + 1.0) / (2.0 * order);
    const double re = std::cos(theta);  // negative for stable poles
    // Analog section denominator s^2 + a1*s + a2 (prototype |p| = 1).
    const double a1 = -2.0 * re * warped;
    const double a2 = warped * warped;
    const double d = 1.0 + a1 + a2;
    Biquad s;
    s.a1 = (2.0 * a2 - 2.0) / d;
    s.a2 = (1.0 - a1 + a2) / d;
    if (kind == FilterKind::lowpass) {
      s.b0 = a2 / d;
      s.b1 = 2.0 * a2 / d;
      s.b2 = a2 / d;
    } else {
      s.b0 = 1.0 / d;
      s.b1 = -2.0 / d;
      s.b2 = 1.0 / d;
    }
    sos.push_back(s);
  }
  if (order % 2 == 1) {
    // Real pole at -warped.
    const double d = 1.0 + warped;
    Biquad s;
    s.a1 = (warped - 1.0) / d;
    s.a2 = 0.0;
    if (kind == FilterKind::lowpass) {
      s.b0 = warped / d;
      s.b1 = warped / d;
    } else {
      s.b0 = 1.0 / d;
      s.b1 = -1.0 / d;
    }
    sos.push_back(s);
  }
  return sos;
}

inline MultiChannelSignal notch_filter(const MultiChannelSignal& sig, double f0_hz, double q) {
  return apply_cascade(sig, {design_notch(f0_hz, q, sig.sample_rate_hz)});
}

inline MultiChannelSignal butterworth_filter(const MultiChannelSignal& sig, FilterKind kind,
                                             int order, double fc_hz) {
  return apply_cascade(sig, design_butterworth(kind, order, fc_hz, sig.sample_rate_hz));
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Windowed-sinc anti-alias FIR (Hamming window) with cutoff fc/fs normalized.
inline std::vector<double> windowed_sinc(int taps, double cutoff_norm) {
  std::vector<double> h(static_cast<size_t>(taps));
  const double mid = (taps - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < taps; ++i) {
    const double t = i - mid;
    const double x = 2.0 * std::numbers::pi * cutoff_norm * t;
    double v = (std::abs(t) < 1e-12) ? 2.0 * cutoff_norm
                                     : std::sin(x) / (std::numbers::pi * t);
    v *= 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (taps - 1));
    h[static_cast<size_t>(i)] = v;
    sum += v;
  }
  for (double& v : h) v /= sum;  // unity DC gain
  return h;
}

/// Anti-alias lowpass at 0.45 * target rate followed by linear interpolation
/// onto the uniform target grid. Group delay of the symmetric FIR is
/// compensated during interpolation so timing is preserved.
inline MultiChannelSignal resample(const MultiChannelSignal& sig, double target_rate_hz,
                                   int aa_taps = 64) {
  if (!(target_rate_hz > 0.0)) throw ParameterError("resample: target rate must be positive");
  if (target_rate_hz > sig.sample_rate_hz)
    throw ParameterError("resample: upsampling not supported (target " +
                         std::to_string(target_rate_hz) + " > source " +
                         std::to_string(sig.sample_rate_hz) + ")");
  if (target_rate_hz == sig.sample_rate_hz) return sig;
  sig.check_finite("resample input");

  const double fs = sig.sample_rate_hz;
  const Eigen::Index n_in = sig.samples();
  const std::vector<double> h = windowed_sinc(aa_taps, 0.45 * target_rate_hz / fs);
  const double delay = (aa_taps - 1) / 2.0;

  Eigen::MatrixXd filtered(sig.channels(), n_in);
  for (Eigen::Index c = 0; c < sig.channels(); ++c) {
    for (Eigen::Index n = 0; n < n_in; ++n) {
      double acc = 0.0;
      const int kmax = static_cast<int>(std::min<Eigen::Index>(aa_taps - 1, n));
      for (int k = 0; k <= kmax; ++k) acc += h[static_cast<size_t>(k)] * sig.data(c, n - k);
      filtered(c, n) = acc;
    }
  }

  const auto n_out = static_cast<Eigen::Index>(
      std::llround(static_cast<double>(n_in) * target_rate_hz / fs));
  Eigen::MatrixXd out(sig.channels(), n_out);
  for (Eigen::Index k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) * fs / target_rate_hz + delay;
    const auto i0 = static_cast<Eigen::Index>(std::floor(pos));
    const double frac = pos - static_cast<double>(i0);
    const Eigen::Index ia = std::clamp<Eigen::Index>(i0, 0, n_in - 1);
    const Eigen::Index ib = std::clamp<Eigen::Index>(i0 + 1, 0, n_in - 1);
    for (Eigen::Index c = 0; c < sig.channels(); ++c)
      out(c, k) = (1.0 - frac) * filtered(c, ia) + frac * filtered(c, ib);
  }
  MultiChannelSignal result = MultiChannelSignal::like(sig, std::move(out));
  result.sample_rate_hz = target_rate_hz;
  result.check_finite("resample output");
  return result;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  std::vector<Eigen::Index> clamped;  // features whose std hit the epsilon floor
};

inline constexpr double kZscoreEpsilon = 1e-8;

/// Fits per-feature mean/std from training samples only (rows = samples,
/// columns = features). Zero-variance features are clamped to epsilon and
/// reported through `warn`.
inline NormStats zscore_fit(const Eigen::MatrixXd& train,
                            const std::function<void(const std::string&)>& warn = {}) {
  if (train.rows() < 2) throw DataError("zscore_fit: need at least 2 samples per feature");
  NormStats st;
  st.mean = train.colwise().mean();
  st.std.resize(train.cols());
  for (Eigen::Index f = 0; f < train.cols(); ++f) {
    const double var =
        (train.col(f).array() - st.mean(f)).square().sum() / static_cast<double>(train.rows());
    double sd = std::sqrt(var);
    if (sd < kZscoreEpsilon) {
      sd = kZscoreEpsilon;
      st.clamped.push_back(f);
      if (warn)
        warn("zscore_fit: feature " + std::to_string(f) +
             " has zero variance; std clamped to epsilon");
    }
    st.std(f) = sd;
  }
  return st;
}

inline Eigen::MatrixXd zscore_apply(const Eigen::MatrixXd& x, const NormStats& st) {
  if (x.cols() != st.mean.size()) throw ParameterError("zscore_apply: feature count mismatch");
  return (x.rowwise() - st.mean.transpose()).array().rowwise() /
         st.std.transpose().array();
}

inline Eigen::MatrixXd zscore_invert(const Eigen::MatrixXd& z, const NormStats& st) {
  if (z.cols() != st.mean.size()) throw ParameterError("zscore_invert: feature count mismatch");
  return (z.array().rowwise() * st.std.transpose().array()).rowwise() +
         st.mean.transpose().array();
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// Standardized input windows paired with causally shifted force targets.
struct WindowedDataset {
  std::vector<Eigen::MatrixXd> inputs;   // per window: F x T
  std::vector<Eigen::VectorXd> targets;  // per window: T
  Eigen::Index window_len = 256;
  Eigen::Index stride = 128;
  double feature_rate_hz = 200.0;
  NormStats input_stats;   // fitted on the training split only
  NormStats target_stats;  // same, for the force target
  bool normalized = false;

  size_t size() const { return inputs.size(); }
};

/// Slices feature/force signals into overlapping windows; the target at
/// window time t is force at t + round(shift_ms * rate / 1000) samples.
/// Windows that would read past the end are dropped.
inline WindowedDataset make_windows(const MultiChannelSignal& features,
                                    const MultiChannelSignal& force, Eigen::Index T,
                                    Eigen::Index stride, double shift_ms) {
  if (features.sample_rate_hz != force.sample_rate_hz)
    throw ParameterError("make_windows: feature/force sample rates differ");
  if (features.samples() != force.samples())
    throw ParameterError("make_windows: feature/force lengths differ");
  if (shift_ms < 0.0) throw ParameterError("make_windows: shift_ms must be >= 0");
  if (T < 1 || stride < 1) throw ParameterError("make_windows: T and stride must be >= 1");

  const auto shift = static_cast<Eigen::Index>(
      std::llround(shift_ms * features.sample_rate_hz / 1000.0));
  const Eigen::Index usable = features.samples() - shift;
  if (usable < T)
    throw DataError("make_windows: signal shorter than window + shift (usable " +
                    std::to_string(usable) + " < T " + std::to_string(T) + ")");

  WindowedDataset ds;
  ds.window_len = T;
  ds.stride = stride;
  ds.feature_rate_hz = features.sample_rate_hz;
  const Eigen::Index count = (usable - T) / stride + 1;
  ds.inputs.reserve(static_cast<size_t>(count));
  ds.targets.reserve(static_cast<size_t>(count));
  for (Eigen::Index w = 0; w < count; ++w) {
    const Eigen::Index start = w * stride;
    ds.inputs.push_back(features.data.middleCols(start, T));
    ds.targets.push_back(force.data.row(0).segment(start + shift, T).transpose());
  }
  return ds;
}

}  // namespace mudec::dsp
