#pragma once

#include "mudec/dsp.hpp"
#include "mudec/kmeans.hpp"
#include "mudec/signal.hpp"
#include "mudec/spikes.hpp"
#include "mudec/stats.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace mudec::decomp {

using ChannelGroups = std::map<std::string, std::vector<int>>;

// ---------------------------------------------------------------------------
// Channel selection
// ---------------------------------------------------------------------------

/// RMS-to-baseline-noise ratio per channel; noise is a median-absolute-
/// deviation estimate.
inline Eigen::VectorXd channel_scores(const MultiChannelSignal& emg) {
  Eigen::VectorXd scores(emg.channels());
  for (Eigen::Index ch = 0; ch < emg.channels(); ++ch) {
    const Eigen::VectorXd row = emg.data.row(ch).transpose();
    const double rms = std::sqrt(row.array().square().mean());
    std::vector<double> v(row.data(), row.data() + row.size());
    const double noise = std::max(stats::mad(v), 1e-300);
    scores(ch) = rms / noise;
  }
  return scores;
}

/// Keeps the top `per_subregion` channels of each of 4 equal subregions per
/// group, ranked by the given scores (ties broken by index). Groups smaller
/// than 4 channels are used whole.
inline std::vector<int> select_channels_scored(
    const Eigen::VectorXd& scores, const ChannelGroups& groups, int per_subregion,
    const std::function<void(const std::string&)>& warn = {}) {
  if (per_subregion < 1) throw ParameterError("select_channels: per_subregion must be >= 1");
  std::vector<int> selected;
  for (const auto& [name, idx] : groups) {
    if (idx.size() < 4) {
      if (warn) warn("select_channels: group '" + name + "' smaller than 4 channels; used whole");
      selected.insert(selected.end(), idx.begin(), idx.end());
      continue;
    }
    const size_t sub = idx.size() / 4;
    for (int region = 0; region < 4; ++region) {
      const size_t begin = static_cast<size_t>(region) * sub;
      const size_t end = region == 3 ? idx.size() : begin + sub;
      std::vector<std::pair<double, int>> ranked;  // (-score, index) for stable tie-break
      for (size_t i = begin; i < end; ++i)
        ranked.emplace_back(-scores(idx[i]), idx[i]);
      std::stable_sort(ranked.begin(), ranked.end());
      const size_t keep = std::min<size_t>(static_cast<size_t>(per_subregion), ranked.size());
      for (size_t i = 0; i < keep; ++i) selected.push_back(ranked[i].second);
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

inline std::vector<int> select_channels(const MultiChannelSignal& emg,
                                        const ChannelGroups& groups, int per_subregion,
                                        const std::function<void(const std::string&)>& warn = {}) {
  return select_channels_scored(channel_scores(emg), groups, per_subregion, warn);
}

/// Optional delay embedding: stacks `order` delayed copies (1..order samples,
/// zero-padded at the start) under the original channels, giving
/// (order+1) * channels rows. order 0 returns the input unchanged.
inline Eigen::MatrixXd embed_delays(const Eigen::MatrixXd& x, int order) {
  if (order < 0) throw ParameterError("embed_delays: order must be >= 0");
  if (order == 0) return x;
  Eigen::MatrixXd out((order + 1) * x.rows(), x.cols());
  out.topRows(x.rows()) = x;
  for (int d = 1; d <= order; ++d) {
    auto block = out.middleRows(static_cast<Eigen::Index>(d) * x.rows(), x.rows());
    block.leftCols(d).setZero();
    block.rightCols(x.cols() - d) = x.leftCols(x.cols() - d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whitening
// ---------------------------------------------------------------------------

struct WhiteningTransform {
  Eigen::VectorXd mean_vector;      // per channel
  Eigen::MatrixXd whitening_matrix; // k x channels
  int retained_components = 0;
};

/// Eigendecomposition of the channel covariance; components with eigenvalue
/// below 1e-10 * lambda_max are dropped.
inline WhiteningTransform fit_whitening(const Eigen::MatrixXd& x /* channels x samples */) {
  if (x.cols() < 2 * x.rows())
    throw DataError("fit_whitening: need at least 2x channels worth of samples");
  WhiteningTransform wt;
  wt.mean_vector = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - wt.mean_vector;
  const Eigen::MatrixXd cov =
      centered * centered.transpose() / static_cast<double>(x.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw NumericalError("fit_whitening: eigendecomposition failed");
  const Eigen::VectorXd& lambda = eig.eigenvalues();  // ascending
  const double lmax = lambda(lambda.size() - 1);
  if (lmax <= 0.0) throw DataError("fit_whitening: input has zero variance");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) > 1e-10 * lmax) keep.push_back(i);
  if (keep.empty()) throw DataError("fit_whitening: rank-deficient to zero");
  wt.retained_components = static_cast<int>(keep.size());
  wt.whitening_matrix.resize(static_cast<Eigen::Index>(keep.size()), x.rows());
  for (size_t r = 0; r < keep.size(); ++r) {
    // Highest-variance components first.
    const Eigen::Index i = keep[keep.size() - 1 - r];
    wt.whitening_matrix.row(static_cast<Eigen::Index>(r)) =
        eig.eigenvectors().col(i).transpose() / std::sqrt(lambda(i));
  }
  return wt;
}

inline Eigen::MatrixXd apply_whitening(const Eigen::MatrixXd& x, const WhiteningTransform& wt) {
  if (x.rows() != wt.mean_vector.size())
    throw ParameterError("apply_whitening: channel count mismatch");
  return wt.whitening_matrix * (x.colwise() - wt.mean_vector);
}

// ---------------------------------------------------------------------------
// FastICA
// ---------------------------------------------------------------------------

struct UnmixingModel {
  Eigen::MatrixXd unmixing_matrix;  // M x k, rows unit-norm
  std::vector<bool> converged;      // per row
  std::vector<int> iterations;      // per row
  int source_count = 0;
};

/// Deflation-mode FastICA with contrast g(u) = u^3. Each row iterates the
/// fixed point w <- E[y g(w'y)] - E[g'(w'y)] w, is orthogonalized against the
/// rows already found, and counts as converged when |<w_new, w_old>| > 1-tol.
inline UnmixingModel fastica(const Eigen::MatrixXd& white /* k x samples */, int n_sources,
                             double tol, int max_iter, std::uint64_t seed) {
  const Eigen::Index k = white.rows();
  const auto n = static_cast<double>(white.cols());
  if (n_sources < 1 || n_sources > k)
    throw ParameterError("fastica: n_sources must lie in [1, retained components]");
  if (!(tol > 0.0) || max_iter < 1) throw ParameterError("fastica: invalid tol/max_iter");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  UnmixingModel model;
  model.unmixing_matrix.resize(n_sources, k);
  model.source_count = n_sources;

  for (int m = 0; m < n_sources; ++m) {
    Eigen::VectorXd w(k);
    for (Eigen::Index i = 0; i < k; ++i) w(i) = gauss(rng);
    // Orthogonalize the start against rows already found.
    for (int r = 0; r < m; ++r) {
      const Eigen::VectorXd wr = model.unmixing_matrix.row(r).transpose();
      w -= w.dot(wr) * wr;
    }
    w.normalize();

    bool converged = false;
    int iters = 0;
    for (; iters < max_iter; ++iters) {
      const Eigen::VectorXd u = white.transpose() * w;              // samples
      const Eigen::ArrayXd u2 = u.array().square();
      Eigen::VectorXd w_new = white * (u2 * u.array()).matrix() / n  // E[y (w'y)^3]
                              - 3.0 * (u2.mean()) * w;               // E[3 (w'y)^2] w
      for (int r = 0; r < m; ++r) {
        const Eigen::VectorXd wr = model.unmixing_matrix.row(r).transpose();
        w_new -= w_new.dot(wr) * wr;
      }
      const double norm = w_new.norm();
      if (norm < 1e-12) {
        // Degenerate direction (everything projected out); restart randomly.
        for (Eigen::Index i = 0; i < k; ++i) w_new(i) = gauss(rng);
        for (int r = 0; r < m; ++r) {
          const Eigen::VectorXd wr = model.unmixing_matrix.row(r).transpose();
          w_new -= w_new.dot(wr) * wr;
        }
        w_new.normalize();
        w = w_new;
        continue;
      }
      w_new /= norm;
      const double agreement = std::abs(w_new.dot(w));
      w = w_new;
      if (agreement > 1.0 - tol) {
        converged = true;
        ++iters;
        break;
      }
    }
    model.unmixing_matrix.row(m) = w.transpose();
    model.converged.push_back(converged);
    model.iterations.push_back(iters);
  }

  if (std::none_of(model.converged.begin(), model.converged.end(), [](bool b) { return b; })) {
    std::string diag = "fastica: no source converged (iterations:";
    for (int it : model.iterations) diag += " " + std::to_string(it);
    throw NumericalError(diag + "; tol=" + std::to_string(tol) + ")");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Spike extraction
// ---------------------------------------------------------------------------

/// Peaks of the squared source above a robust threshold, 2-clustered by
/// k-means++ on peak height; the higher-mean cluster is the spike class.
/// Spikes closer than 20 ms are merged keeping the larger peak.
inline SpikeTrain extract_spikes(const Eigen::VectorXd& source, double rate_hz,
                                 std::uint64_t seed = 42) {
  if (source.size() == 0) throw ParameterError("extract_spikes: empty source");
  const Eigen::ArrayXd z = source.array().square();

  std::vector<double> zv(z.data(), z.data() + z.size());
  const double med = stats::median(zv);
  std::vector<double> dev(zv.size());
  for (size_t i = 0; i < zv.size(); ++i) dev[i] = std::abs(zv[i] - med);
  const double threshold = med + 3.0 * stats::median(std::move(dev));

  std::vector<std::int64_t> peak_idx;
  std::vector<double> peak_height;
  for (Eigen::Index i = 1; i + 1 < z.size(); ++i) {
    if (z(i) > threshold && z(i) > z(i - 1) && z(i) >= z(i + 1)) {
      peak_idx.push_back(i);
      peak_height.push_back(z(i));
    }
  }

  SpikeTrain train;
  if (peak_idx.size() < 2) {
    train.quality.silhouette = -1.0;
    return train;
  }

  const kmeans::Clustering1D clus = kmeans::cluster_1d(peak_height, 2, seed, 5);
  const int spike_label = clus.centers[0] >= clus.centers[1] ? 0 : 1;
  train.quality.silhouette = kmeans::silhouette_1d(peak_height, clus.labels, 2);

  const auto refractory = static_cast<std::int64_t>(std::llround(0.020 * rate_hz));
  std::int64_t last = -1;
  double last_height = 0.0;
  for (size_t i = 0; i < peak_idx.size(); ++i) {
    if (clus.labels[i] != spike_label) continue;
    if (last >= 0 && peak_idx[i] - last < refractory) {
      if (peak_height[i] > last_height) {  // keep the larger peak
        train.indices.back() = peak_idx[i];
        last = peak_idx[i];
        last_height = peak_height[i];
      }
      continue;
    }
    train.indices.push_back(peak_idx[i]);
    last = peak_idx[i];
    last_height = peak_height[i];
  }
  return train;
}

// ---------------------------------------------------------------------------
// Neural drive
// ---------------------------------------------------------------------------

struct KernelDescriptor {
  std::string shape = "hann";
  double length_ms = 400.0;
};

/// Causal smoothing kernel at the given rate, unit peak.
inline Eigen::VectorXd make_kernel(const KernelDescriptor& k, double rate_hz) {
  const auto len = static_cast<Eigen::Index>(std::llround(k.length_ms / 1000.0 * rate_hz));
  if (len < 1) throw ParameterError("make_kernel: kernel length must be > 0");
  Eigen::VectorXd h(len);
  if (k.shape == "hann") {
    for (Eigen::Index i = 0; i < len; ++i)
      h(i) = len == 1 ? 1.0
                      : 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                              static_cast<double>(len - 1)));
  } else if (k.shape == "boxcar") {
    h.setOnes();
  } else {
    throw ParameterError("make_kernel: unknown kernel shape '" + k.shape + "'");
  }
  return h;
}

struct NeuralDrive {
  MultiChannelSignal unit_drives;   // rows = units, at out_rate
  MultiChannelSignal group_drives;  // rows = groups, at out_rate
  std::vector<std::string> group_names;
  KernelDescriptor kernel;
};

/// Drive of a single train at the EMG rate: causal convolution of the binary
/// train with the kernel (sparse accumulation over spikes).
inline Eigen::VectorXd unit_drive_at_emg_rate(const SpikeTrain& train, std::int64_t n_samples,
                                              const Eigen::VectorXd& h) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n_samples);
  for (std::int64_t s : train.indices) {
    if (s < 0 || s >= n_samples) continue;
    const std::int64_t m = std::min<std::int64_t>(h.size(), n_samples - s);
    d.segment(s, m) += h.head(m);
  }
  return d;
}

/// Smoothed per-unit and per-group drives at out_rate_hz. `unit_group[i]`
/// names the group of unit i; units with an unknown group are kept in
/// unit_drives but excluded from every group sum.
inline NeuralDrive neural_drive(const SpikeTrainSet& spikes, const KernelDescriptor& kernel,
                                const std::vector<std::string>& unit_group,
                                double out_rate_hz = 200.0) {
  if (unit_group.size() != spikes.units.size())
    throw ParameterError("neural_drive: unit_group size mismatch");
  const Eigen::VectorXd h = make_kernel(kernel, spikes.sample_rate_hz);

  MultiChannelSignal emg_rate_drives;
  emg_rate_drives.sample_rate_hz = spikes.sample_rate_hz;
  emg_rate_drives.units = SignalUnits::dimensionless;
  emg_rate_drives.data.resize(static_cast<Eigen::Index>(spikes.units.size()), spikes.n_samples);
  for (size_t u = 0; u < spikes.units.size(); ++u) {
    emg_rate_drives.data.row(static_cast<Eigen::Index>(u)) =
        unit_drive_at_emg_rate(spikes.units[u], spikes.n_samples, h).transpose();
    emg_rate_drives.channel_labels.push_back("unit" + std::to_string(u));
  }

  NeuralDrive nd;
  nd.kernel = kernel;
  nd.unit_drives = out_rate_hz == spikes.sample_rate_hz
                       ? emg_rate_drives
                       : dsp::resample(emg_rate_drives, out_rate_hz);
  // Drives are nonnegative by construction; the anti-alias FIR may undershoot.
  nd.unit_drives.data = nd.unit_drives.data.cwiseMax(0.0);

  std::vector<std::string> names;
  for (const std::string& g : unit_group)
    if (!g.empty() && std::find(names.begin(), names.end(), g) == names.end())
      names.push_back(g);
  std::sort(names.begin(), names.end());
  nd.group_names = names;
  nd.group_drives.sample_rate_hz = nd.unit_drives.sample_rate_hz;
  nd.group_drives.units = SignalUnits::dimensionless;
  nd.group_drives.data =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(names.size()), nd.unit_drives.samples());
  for (size_t u = 0; u < spikes.units.size(); ++u) {
    const auto it = std::find(names.begin(), names.end(), unit_group[u]);
    if (it == names.end()) continue;
    nd.group_drives.data.row(it - names.begin()) +=
        nd.unit_drives.data.row(static_cast<Eigen::Index>(u));
  }
  nd.group_drives.channel_labels = names;
  return nd;
}

// ---------------------------------------------------------------------------
// Deduplication and ranking
// ---------------------------------------------------------------------------

struct DedupConfig {
  double silhouette_cutoff = 0.85;
  double duplicate_corr_threshold = 0.5;
  double bin_ms = 5.0;
  KernelDescriptor kernel;  // for the force-correlation ranking
};

inline Eigen::VectorXd binned_train(const SpikeTrain& t, std::int64_t n_samples, double rate_hz,
                                    double bin_ms) {
  const auto bin = static_cast<std::int64_t>(std::llround(bin_ms / 1000.0 * rate_hz));
  const std::int64_t n_bins = (n_samples + bin - 1) / bin;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_bins);
  for (std::int64_t i : t.indices)
    if (i >= 0 && i < n_samples) v(i / bin) += 1.0;
  return v;
}

/// Drops low-silhouette units, collapses duplicate pairs (binned-train
/// correlation above threshold) to the higher-silhouette unit, and ranks the
/// survivors by |Pearson corr(smoothed drive, force)|. Force must share the
/// spike-set timeline (any rate).
inline SpikeTrainSet dedup_and_rank(const SpikeTrainSet& units, const MultiChannelSignal& force,
                                    const DedupConfig& cfg = {}) {
  std::vector<size_t> alive;
  for (size_t u = 0; u < units.units.size(); ++u)
    if (units.units[u].quality.silhouette >= cfg.silhouette_cutoff) alive.push_back(u);

  // Duplicate collapse: visit in descending silhouette order so the better
  // unit of each correlated pair survives.
  std::sort(alive.begin(), alive.end(), [&](size_t a, size_t b) {
    const double sa = units.units[a].quality.silhouette;
    const double sb = units.units[b].quality.silhouette;
    return sa != sb ? sa > sb : a < b;
  });
  std::vector<size_t> kept;
  std::vector<Eigen::VectorXd> kept_bins;
  for (size_t u : alive) {
    const Eigen::VectorXd bu =
        binned_train(units.units[u], units.n_samples, units.sample_rate_hz, cfg.bin_ms);
    bool dup = false;
    for (const Eigen::VectorXd& bk : kept_bins) {
      if (stats::pearson(bu, bk) > cfg.duplicate_corr_threshold) {
        dup = true;
        break;
      }
    }
    if (!dup) {
      kept.push_back(u);
      kept_bins.push_back(bu);
    }
  }
  if (kept.empty())
    throw DataError("dedup_and_rank: all units dropped (silhouette cutoff " +
                    std::to_string(cfg.silhouette_cutoff) + ")");

  // Rank by |corr(smoothed drive, force)| at the force rate.
  const Eigen::VectorXd h = make_kernel(cfg.kernel, units.sample_rate_hz);
  std::vector<std::pair<double, size_t>> ranked;
  for (size_t u : kept) {
    MultiChannelSignal drive;
    drive.sample_rate_hz = units.sample_rate_hz;
    drive.data = unit_drive_at_emg_rate(units.units[u], units.n_samples, h).transpose();
    const MultiChannelSignal at_force_rate =
        force.sample_rate_hz == drive.sample_rate_hz ? drive
                                                     : dsp::resample(drive, force.sample_rate_hz);
    const Eigen::Index n = std::min(at_force_rate.samples(), force.samples());
    const double r = std::abs(stats::pearson(at_force_rate.data.row(0).head(n).transpose(),
                                             force.data.row(0).head(n).transpose()));
    ranked.emplace_back(-r, u);
  }
  std::stable_sort(ranked.begin(), ranked.end());

  SpikeTrainSet out;
  out.sample_rate_hz = units.sample_rate_hz;
  out.n_samples = units.n_samples;
  for (const auto& [neg_r, u] : ranked) {
    SpikeTrain t = units.units[u];
    t.quality.force_corr = -neg_r;
    out.units.push_back(std::move(t));
    out.unit_labels.push_back(u < units.unit_labels.size() ? units.unit_labels[u]
                                                           : "unit" + std::to_string(u));
  }
  return out;
}

}  // namespace mudec::decomp
