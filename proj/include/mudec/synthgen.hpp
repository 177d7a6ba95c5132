#pragma once

#include "mudec/signal.hpp"
#include "mudec/spikes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace mudec::synth {

/// Recruitment/rate-coding description of a simulated motor-unit pool.
struct MotorUnitPool {
  int n_units = 8;
  std::vector<double> recruitment_thresholds;  // strictly increasing, in [0,1) of drive
  double min_rate_hz = 8.0;
  double peak_rate_hz = 35.0;
  std::vector<double> twitch_amplitudes;        // per unit, positive
  std::vector<double> twitch_time_constants_ms; // per unit, positive
  double isi_cv = 0.15;                         // inter-spike-interval CV, in [0, 0.5]

  void validate() const {
    if (n_units < 1) throw ParameterError("MotorUnitPool: n_units must be >= 1");
    if (static_cast<int>(recruitment_thresholds.size()) != n_units ||
        static_cast<int>(twitch_amplitudes.size()) != n_units ||
        static_cast<int>(twitch_time_constants_ms.size()) != n_units)
      throw ParameterError("MotorUnitPool: per-unit arrays must have n_units entries");
    for (int u = 0; u < n_units; ++u) {
      if (recruitment_thresholds[static_cast<size_t>(u)] < 0.0 ||
          recruitment_thresholds[static_cast<size_t>(u)] >= 1.0)
        throw ParameterError("MotorUnitPool: thresholds must lie in [0,1)");
      if (u > 0 && recruitment_thresholds[static_cast<size_t>(u)] <=
                       recruitment_thresholds[static_cast<size_t>(u - 1)])
        throw ParameterError("MotorUnitPool: thresholds must be strictly increasing");
      if (twitch_amplitudes[static_cast<size_t>(u)] <= 0.0 ||
          twitch_time_constants_ms[static_cast<size_t>(u)] <= 0.0)
        throw ParameterError("MotorUnitPool: twitch parameters must be positive");
    }
    if (!(min_rate_hz < peak_rate_hz))
      throw ParameterError("MotorUnitPool: min_rate must be below peak_rate");
    if (isi_cv < 0.0 || isi_cv > 0.5)
      throw ParameterError("MotorUnitPool: isi_cv must lie in [0, 0.5]");
  }
};

/// Linear instantaneous-per-sample mixing: per-unit, per-channel MUAP
/// templates plus white Gaussian measurement noise.
struct MixingModel {
  // muap_templates[u] is channels x template_samples.
  std::vector<Eigen::MatrixXd> muap_templates;
  double noise_std = 0.0;
  std::map<std::string, std::vector<int>> channel_groups;

  int channels() const {
    return muap_templates.empty() ? 0 : static_cast<int>(muap_templates[0].rows());
  }
  void validate() const {
    if (muap_templates.empty()) throw ParameterError("MixingModel: no templates");
    for (const auto& t : muap_templates) {
      if (t.rows() != muap_templates[0].rows())
        throw ParameterError("MixingModel: inconsistent channel counts");
      if (!t.allFinite()) throw ParameterError("MixingModel: non-finite template");
    }
    if (noise_std < 0.0) throw ParameterError("MixingModel: noise_std must be >= 0");
  }
};

struct TrapezoidProfile {
  double ramp_s = 5.0;
  double plateau_s = 15.0;
  double plateau_level_frac_mvf = 0.5;  // in (0, 1]
};

struct TrialSpec {
  double duration_s = 30.0;
  TrapezoidProfile target_profile;
  std::uint64_t seed = 0;

  void validate() const {
    const auto& p = target_profile;
    if (!(duration_s > 0.0)) throw ParameterError("TrialSpec: duration must be positive");
    if (2.0 * p.ramp_s + p.plateau_s > duration_s)
      throw ParameterError("TrialSpec: ramp+plateau does not fit in duration");
    if (p.plateau_level_frac_mvf <= 0.0 || p.plateau_level_frac_mvf > 1.0)
      throw ParameterError("TrialSpec: plateau level must lie in (0, 1]");
  }

  /// Normalized drive (fraction of MVF) at time t: ramp up, plateau, ramp down.
  double drive_at(double t) const {
    const auto& p = target_profile;
    const double lvl = p.plateau_level_frac_mvf;
    if (t < 0.0) return 0.0;
    if (t < p.ramp_s) return lvl * t / p.ramp_s;
    if (t < p.ramp_s + p.plateau_s) return lvl;
    const double down = t - p.ramp_s - p.plateau_s;
    if (down < p.ramp_s) return lvl * (1.0 - down / p.ramp_s);
    return 0.0;
  }
};

struct Trial {
  MultiChannelSignal emg;    // @2048 Hz
  MultiChannelSignal force;  // @2048 Hz, percent MVF
  SpikeTrainSet truth_spikes;
};

inline constexpr double kEmgRateHz = 2048.0;

/// Spike times for one unit under the trapezoid drive. Jitter draws come from
/// a stream indexed only by (seed, unit), so raising the drive level with the
/// same seed reuses the same draws spike-for-spike.
inline std::vector<std::int64_t> generate_unit_spikes(const MotorUnitPool& pool, int unit,
                                                      const TrialSpec& spec) {
  const double th = pool.recruitment_thresholds[static_cast<size_t>(unit)];
  std::mt19937_64 rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(unit) + 1ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::int64_t> spikes;
  double t = 0.0;
  const double scan_dt = 1e-3;
  std::int64_t last_idx = -1;
  while (t < spec.duration_s) {
    const double drive = spec.drive_at(t);
    if (drive <= th) {
      t += scan_dt;
      continue;
    }
    const double rate = pool.min_rate_hz + (pool.peak_rate_hz - pool.min_rate_hz) *
                                               (drive - th) / (1.0 - th);
    const double jitter = std::clamp(1.0 + pool.isi_cv * gauss(rng), 0.3, 1.7);
    t += jitter / rate;
    if (t >= spec.duration_s) break;
    if (spec.drive_at(t) > th) {
      const auto idx = static_cast<std::int64_t>(std::llround(t * kEmgRateHz));
      if (idx > last_idx) {
        spikes.push_back(idx);
        last_idx = idx;
      }
    }
  }
  return spikes;
}

/// Renders EMG, force, and ground-truth spikes for one trial. Deterministic
/// given the spec seed.
inline Trial generate_trial(const MotorUnitPool& pool, const MixingModel& mix,
                            const TrialSpec& spec) {
  pool.validate();
  mix.validate();
  spec.validate();

  const auto n = static_cast<std::int64_t>(std::llround(spec.duration_s * kEmgRateHz));
  const int channels = mix.channels();

  Trial trial;
  trial.truth_spikes.sample_rate_hz = kEmgRateHz;
  trial.truth_spikes.n_samples = n;

  Eigen::MatrixXd emg = Eigen::MatrixXd::Zero(channels, n);
  Eigen::VectorXd force = Eigen::VectorXd::Zero(n);

  for (int u = 0; u < pool.n_units; ++u) {
    SpikeTrain train;
    train.indices = generate_unit_spikes(pool, u, spec);

    const Eigen::MatrixXd& tmpl = mix.muap_templates[static_cast<size_t>(u)];
    const auto tlen = static_cast<std::int64_t>(tmpl.cols());

    // Twitch kernel: alpha function amp * (t/tau) * exp(1 - t/tau).
    const double tau = pool.twitch_time_constants_ms[static_cast<size_t>(u)] / 1000.0;
    const double amp = pool.twitch_amplitudes[static_cast<size_t>(u)];
    const auto klen = static_cast<std::int64_t>(std::llround(6.0 * tau * kEmgRateHz));
    Eigen::VectorXd twitch(klen);
    for (std::int64_t k = 0; k < klen; ++k) {
      const double tt = static_cast<double>(k) / kEmgRateHz / tau;
      twitch(k) = amp * tt * std::exp(1.0 - tt);
    }

    for (std::int64_t s : train.indices) {
      const std::int64_t m = std::min(tlen, n - s);
      if (m > 0) emg.middleCols(s, m) += tmpl.leftCols(m);
      const std::int64_t fm = std::min(klen, n - s);
      if (fm > 0) force.segment(s, fm) += twitch.head(fm);
    }

    trial.truth_spikes.units.push_back(std::move(train));
    trial.truth_spikes.unit_labels.push_back("mu" + std::to_string(u));
  }

  if (mix.noise_std > 0.0) {
    std::mt19937_64 rng(spec.seed * 2000003ULL + 17ULL);
    std::normal_distribution<double> gauss(0.0, mix.noise_std);
    for (std::int64_t j = 0; j < n; ++j)
      for (int c = 0; c < channels; ++c) emg(c, j) += gauss(rng);
  }

  // Normalize force so the plateau mean sits at plateau_level * 100 %MVF.
  const auto& p = spec.target_profile;
  const auto p0 = static_cast<std::int64_t>((p.ramp_s + 1.0) * kEmgRateHz);
  const auto p1 = static_cast<std::int64_t>((p.ramp_s + p.plateau_s - 1.0) * kEmgRateHz);
  if (p1 > p0) {
    const double plateau_mean = force.segment(p0, p1 - p0).mean();
    if (plateau_mean > 0.0)
      force *= (p.plateau_level_frac_mvf * 100.0) / plateau_mean;
  }

  trial.emg.data = std::move(emg);
  trial.emg.sample_rate_hz = kEmgRateHz;
  trial.emg.units = SignalUnits::volts;
  for (int c = 0; c < channels; ++c) trial.emg.channel_labels.push_back("ch" + std::to_string(c));

  trial.force.data = force.transpose();
  trial.force.sample_rate_hz = kEmgRateHz;
  trial.force.units = SignalUnits::percent_mvf;
  trial.force.channel_labels = {"force"};
  return trial;
}

struct Scenario {
  std::string name;
  MotorUnitPool pool;
  MixingModel mix;
  std::vector<TrialSpec> trials;
  double snr_db = 20.0;
};

namespace detail {

/// Hermite-wavelet MUAP waveform: H_order(t/w) * exp(-t^2 / (2 w^2)).
inline Eigen::VectorXd hermite_waveform(int order, double width_ms, double peak_delay_ms) {
  const double w = width_ms / 1000.0;
  const double dur = 12.0e-3;
  const auto len = static_cast<std::int64_t>(std::llround(dur * kEmgRateHz));
  Eigen::VectorXd wf(len);
  const double center = peak_delay_ms / 1000.0;
  for (std::int64_t k = 0; k < len; ++k) {
    const double t = static_cast<double>(k) / kEmgRateHz - center;
    const double x = t / w;
    double h = 1.0;
    switch (order % 3) {
      case 0: h = x; break;                    // H1
      case 1: h = x * x - 1.0; break;          // H2
      case 2: h = x * (x * x - 3.0); break;    // H3
    }
    wf(k) = h * std::exp(-0.5 * x * x);
  }
  wf /= wf.cwiseAbs().maxCoeff();
  return wf;
}

}  // namespace detail

/// Builds the named desk-scale scenario: a pool, a mixing model calibrated to
/// the scenario SNR over the plateau, and 10 trial specs with distinct seeds.
inline Scenario default_scenario(const std::string& name, std::uint64_t base_seed = 1234) {
  int n_units = 0, flexor_ch = 0, extensor_ch = 0;
  double snr_db = 0.0;
  bool overlap = false;
  if (name == "easy") {
    n_units = 8;
    flexor_ch = 40;
    extensor_ch = 24;  // 64 channels in total
    snr_db = 20.0;
  } else if (name == "medium") {
    n_units = 20;
    flexor_ch = 128;
    extensor_ch = 64;
    snr_db = 10.0;
  } else if (name == "hard") {
    n_units = 20;
    flexor_ch = 128;
    extensor_ch = 64;
    snr_db = 5.0;
    overlap = true;
  } else {
    throw ParameterError("default_scenario: unknown scenario '" + name + "'");
  }

  Scenario sc;
  sc.name = name;
  sc.snr_db = snr_db;

  MotorUnitPool& pool = sc.pool;
  pool.n_units = n_units;
  for (int u = 0; u < n_units; ++u) {
    const double frac = static_cast<double>(u) / static_cast<double>(n_units);
    pool.recruitment_thresholds.push_back(0.05 + 0.40 * frac);
    pool.twitch_amplitudes.push_back(1.0 + 2.0 * frac);
    pool.twitch_time_constants_ms.push_back(90.0 - 55.0 * frac);
  }
  pool.validate();

  MixingModel& mix = sc.mix;
  const int channels = flexor_ch + extensor_ch;
  std::vector<int> flexor_idx, extensor_idx;
  for (int c = 0; c < flexor_ch; ++c) flexor_idx.push_back(c);
  for (int c = 0; c < extensor_ch; ++c) extensor_idx.push_back(flexor_ch + c);
  mix.channel_groups["flexor"] = flexor_idx;
  mix.channel_groups["extensor"] = extensor_idx;

  // Channel positions on an 8-column grid, 4 mm pitch, per group.
  auto channel_pos = [&](int c) {
    const bool ext = c >= flexor_ch;
    const int local = ext ? c - flexor_ch : c;
    const double x = 4.0 * (local % 8) + (ext ? 60.0 : 0.0);
    const double y = 4.0 * (local / 8);
    return std::pair<double, double>(x, y);
  };

  std::mt19937_64 rng(base_seed * 40009ULL + 3ULL);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int u = 0; u < n_units; ++u) {
    const bool extensor_unit = (u % 4 == 3);  // a minority of units per task antagonist
    // Unit territory center on its group's grid (mm).
    const double spread_x = extensor_unit ? 28.0 : 28.0;
    double cx = (extensor_unit ? 60.0 : 0.0) + uni(rng) * spread_x;
    double cy = uni(rng) * (extensor_unit ? (extensor_ch / 8) : (flexor_ch / 8)) * 4.0;
    if (overlap) {
      // Cluster unit territories to force template overlap.
      cx = (extensor_unit ? 70.0 : 10.0) + uni(rng) * 6.0;
      cy = 8.0 + uni(rng) * 6.0;
    }
    const Eigen::VectorXd wf =
        detail::hermite_waveform(u, 0.8 + 0.5 * uni(rng), 3.0 + 3.0 * uni(rng));
    Eigen::MatrixXd tmpl(channels, wf.size());
    for (int c = 0; c < channels; ++c) {
      const auto [px, py] = channel_pos(c);
      const double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
      const double gain = 1.0 / (1.0 + d2 / (8.0 * 8.0));
      tmpl.row(c) = gain * wf.transpose();
    }
    mix.muap_templates.push_back(std::move(tmpl));
  }

  for (int t = 0; t < 10; ++t) {
    TrialSpec spec;
    spec.duration_s = 30.0;
    spec.target_profile = {5.0, 15.0, 0.5};
    spec.seed = base_seed + static_cast<std::uint64_t>(t);
    sc.trials.push_back(spec);
  }

  // Calibrate noise_std to the scenario SNR: render one noise-free probe
  // trial and measure plateau RMS.
  mix.noise_std = 0.0;
  const Trial probe = generate_trial(pool, mix, sc.trials[0]);
  const auto& p = sc.trials[0].target_profile;
  const auto p0 = static_cast<std::int64_t>((p.ramp_s + 1.0) * kEmgRateHz);
  const auto p1 = static_cast<std::int64_t>((p.ramp_s + p.plateau_s - 1.0) * kEmgRateHz);
  const double rms = std::sqrt(probe.emg.data.middleCols(p0, p1 - p0).array().square().mean());
  mix.noise_std = rms / std::pow(10.0, snr_db / 20.0);
  return sc;
}

}  // namespace mudec::synth
