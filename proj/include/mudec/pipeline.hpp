#pragma once

#include "mudec/config.hpp"
#include "mudec/container.hpp"
#include "mudec/decomp.hpp"
#include "mudec/dsp.hpp"
#include "mudec/models.hpp"
#include "mudec/spikes.hpp"
#include "mudec/stats.hpp"
#include "mudec/synthgen.hpp"
#include "mudec/train.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mudec::pipeline {

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

inline MultiChannelSignal preprocess_emg(const MultiChannelSignal& emg,
                                         const PipelineConfig& cfg) {
  MultiChannelSignal out = dsp::notch_filter(emg, cfg.notch_f0_hz, cfg.notch_q);
  return dsp::butterworth_filter(out, dsp::FilterKind::highpass, cfg.highpass_order,
                                 cfg.highpass_fc_hz);
}

/// Force conditioning at the original rate (low-pass only).
inline MultiChannelSignal preprocess_force(const MultiChannelSignal& force,
                                           const PipelineConfig& cfg) {
  return dsp::butterworth_filter(force, dsp::FilterKind::lowpass, cfg.force_lowpass_order,
                                 cfg.force_lowpass_fc_hz);
}

inline MultiChannelSignal force_at_feature_rate(const MultiChannelSignal& force,
                                                const PipelineConfig& cfg) {
  return dsp::resample(preprocess_force(force, cfg), cfg.feature_rate_hz);
}

// ---------------------------------------------------------------------------
// Decomposition model (fitted on training trials, applied frozen everywhere)
// ---------------------------------------------------------------------------

struct DecompositionModel {
  std::vector<int> selected_channels;
  int delay_embed = 0;
  decomp::WhiteningTransform whitening;
  Eigen::MatrixXd unmixing;             // retained units x k
  std::vector<std::string> unit_group;  // per retained unit
  std::vector<double> fit_silhouette;
  std::vector<double> fit_force_corr;
  int n_sources_run = 0;
  int n_converged = 0;

  int n_units() const { return static_cast<int>(unmixing.rows()); }
};

/// Group of maximum back-projected loading energy for one unmixing row.
inline std::string dominant_group(const Eigen::VectorXd& row_k,
                                  const decomp::WhiteningTransform& wt,
                                  const std::vector<int>& selected,
                                  const decomp::ChannelGroups& groups) {
  // Rows may include delayed copies; fold their energy back onto the base
  // channel (loadings.size() is a multiple of selected.size()).
  const Eigen::VectorXd loadings = wt.whitening_matrix.transpose() * row_k;
  const auto n_sel = static_cast<Eigen::Index>(selected.size());
  Eigen::VectorXd energy = Eigen::VectorXd::Zero(n_sel);
  for (Eigen::Index r = 0; r < loadings.size(); ++r)
    energy(r % n_sel) += loadings(r) * loadings(r);
  std::string best;
  double best_energy = -1.0;
  for (const auto& [name, idx] : groups) {
    double e = 0.0;
    for (size_t i = 0; i < selected.size(); ++i)
      if (std::find(idx.begin(), idx.end(), selected[i]) != idx.end())
        e += energy(static_cast<Eigen::Index>(i));
    if (e > best_energy) {
      best_energy = e;
      best = name;
    }
  }
  return best;
}

/// Whitening + FastICA + spike clustering + dedup/ranking on the concatenated
/// training trials. `forces` must be the per-trial conditioned force signals
/// at the EMG rate, in trial order.
inline DecompositionModel fit_decomposition(const std::vector<MultiChannelSignal>& emg_trials,
                                            const std::vector<MultiChannelSignal>& forces,
                                            const decomp::ChannelGroups& groups,
                                            const PipelineConfig& cfg,
                                            const std::function<void(const std::string&)>& log = {}) {
  if (emg_trials.empty()) throw DataError("fit_decomposition: no training trials");
  DecompositionModel model;

  // Channel ranking: scores averaged across the training trials.
  {
    Eigen::VectorXd scores = Eigen::VectorXd::Zero(emg_trials[0].channels());
    for (const auto& trial : emg_trials) scores += decomp::channel_scores(trial);
    scores /= static_cast<double>(emg_trials.size());
    model.selected_channels =
        decomp::select_channels_scored(scores, groups, cfg.per_subregion, log);
  }
  model.delay_embed = cfg.delay_embed;
  const auto n_sel = static_cast<Eigen::Index>(model.selected_channels.size());
  const Eigen::Index n_rows = n_sel * (cfg.delay_embed + 1);

  Eigen::Index total = 0;
  for (const auto& t : emg_trials) total += t.samples();
  Eigen::MatrixXd x(n_rows, total);
  Eigen::VectorXd force_cat(total);
  Eigen::Index off = 0;
  for (size_t t = 0; t < emg_trials.size(); ++t) {
    // Embed per trial so delayed copies never cross a trial boundary.
    Eigen::MatrixXd sel(n_sel, emg_trials[t].samples());
    for (Eigen::Index i = 0; i < n_sel; ++i)
      sel.row(i) = emg_trials[t].data.row(model.selected_channels[static_cast<size_t>(i)]);
    x.middleCols(off, emg_trials[t].samples()) = decomp::embed_delays(sel, cfg.delay_embed);
    force_cat.segment(off, emg_trials[t].samples()) =
        forces[t].data.row(0).segment(0, emg_trials[t].samples()).transpose();
    off += emg_trials[t].samples();
  }

  model.whitening = decomp::fit_whitening(x);
  const Eigen::MatrixXd white = decomp::apply_whitening(x, model.whitening);
  x.resize(0, 0);

  int n_sources = cfg.n_sources > 0 ? cfg.n_sources : std::min(model.whitening.retained_components, 30);
  n_sources = std::min(n_sources, model.whitening.retained_components);
  const decomp::UnmixingModel ica =
      decomp::fastica(white, n_sources, cfg.ica_tol, cfg.ica_max_iter, cfg.ica_seed);
  model.n_sources_run = n_sources;
  model.n_converged =
      static_cast<int>(std::count(ica.converged.begin(), ica.converged.end(), true));
  if (log)
    log("fastica: " + std::to_string(model.n_converged) + "/" + std::to_string(n_sources) +
        " sources converged");

  // Spike clustering on the concatenated training sources.
  SpikeTrainSet candidates;
  candidates.sample_rate_hz = synth::kEmgRateHz;
  candidates.n_samples = total;
  for (int m = 0; m < n_sources; ++m) {
    const Eigen::VectorXd source = (ica.unmixing_matrix.row(m) * white).transpose();
    SpikeTrain train = decomp::extract_spikes(source, synth::kEmgRateHz,
                                              cfg.ica_seed + static_cast<std::uint64_t>(m));
    train.quality.converged = ica.converged[static_cast<size_t>(m)];
    candidates.units.push_back(std::move(train));
    candidates.unit_labels.push_back("src" + std::to_string(m));
  }

  MultiChannelSignal force_sig;
  force_sig.data = force_cat.transpose();
  force_sig.sample_rate_hz = synth::kEmgRateHz;
  force_sig.units = SignalUnits::percent_mvf;
  decomp::DedupConfig dcfg;
  dcfg.silhouette_cutoff = cfg.silhouette_cutoff;
  dcfg.duplicate_corr_threshold = cfg.duplicate_corr_threshold;
  dcfg.kernel = cfg.kernel();
  const SpikeTrainSet retained = decomp::dedup_and_rank(candidates, force_sig, dcfg);

  model.unmixing.resize(static_cast<Eigen::Index>(retained.size()),
                        model.whitening.retained_components);
  for (size_t u = 0; u < retained.size(); ++u) {
    // Recover the source row index from the label assigned above.
    const int src = std::stoi(retained.unit_labels[u].substr(3));
    model.unmixing.row(static_cast<Eigen::Index>(u)) = ica.unmixing_matrix.row(src);
    model.fit_silhouette.push_back(retained.units[u].quality.silhouette);
    model.fit_force_corr.push_back(retained.units[u].quality.force_corr);
    model.unit_group.push_back(dominant_group(ica.unmixing_matrix.row(src).transpose(),
                                              model.whitening, model.selected_channels, groups));
  }
  return model;
}

/// Applies the frozen transforms to one trial and re-detects spikes per unit.
inline SpikeTrainSet apply_decomposition(const DecompositionModel& model,
                                         const MultiChannelSignal& emg_pre,
                                         std::uint64_t spike_seed = 42) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(model.selected_channels.size()),
                    emg_pre.samples());
  for (size_t i = 0; i < model.selected_channels.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = emg_pre.data.row(model.selected_channels[i]);
  const Eigen::MatrixXd sources =
      model.unmixing *
      decomp::apply_whitening(decomp::embed_delays(x, model.delay_embed), model.whitening);

  SpikeTrainSet out;
  out.sample_rate_hz = emg_pre.sample_rate_hz;
  out.n_samples = emg_pre.samples();
  for (Eigen::Index u = 0; u < sources.rows(); ++u) {
    SpikeTrain t = decomp::extract_spikes(sources.row(u).transpose(), emg_pre.sample_rate_hz,
                                          spike_seed + static_cast<std::uint64_t>(u));
    out.units.push_back(std::move(t));
    out.unit_labels.push_back("unit" + std::to_string(u));
  }
  return out;
}

/// Decoder features for one trial's spike set, per the configured mode.
inline MultiChannelSignal trial_features(const SpikeTrainSet& spikes,
                                         const DecompositionModel& model,
                                         const PipelineConfig& cfg) {
  const decomp::NeuralDrive nd =
      decomp::neural_drive(spikes, cfg.kernel(), model.unit_group, cfg.feature_rate_hz);
  return cfg.feature_mode == "per_group" ? nd.group_drives : nd.unit_drives;
}

// ---------------------------------------------------------------------------
// Truth-linked scoring (synthetic data only)
// ---------------------------------------------------------------------------

struct RecoveryScore {
  int truth_unit = -1;
  double roa = 0.0;
};

/// Best-matching truth unit per estimated unit; RoA tolerance is +-2.5 ms with
/// alignment of the constant decomposition lag (up to +-20 ms).
inline std::vector<RecoveryScore> score_against_truth(const SpikeTrainSet& est,
                                                      const SpikeTrainSet& truth) {
  const auto tol = static_cast<std::int64_t>(std::llround(0.0025 * truth.sample_rate_hz));
  const auto lag = static_cast<std::int64_t>(std::llround(0.020 * truth.sample_rate_hz));
  std::vector<RecoveryScore> scores;
  for (const SpikeTrain& e : est.units) {
    RecoveryScore best;
    for (size_t u = 0; u < truth.units.size(); ++u) {
      const double roa = rate_of_agreement(e, truth.units[u], tol, lag);
      if (roa > best.roa) {
        best.roa = roa;
        best.truth_unit = static_cast<int>(u);
      }
    }
    scores.push_back(best);
  }
  return scores;
}

/// Number of distinct truth units recovered above the RoA floor.
inline int distinct_units_recovered(const std::vector<RecoveryScore>& scores, double roa_floor) {
  std::vector<int> seen;
  for (const RecoveryScore& s : scores)
    if (s.roa > roa_floor && s.truth_unit >= 0 &&
        std::find(seen.begin(), seen.end(), s.truth_unit) == seen.end())
      seen.push_back(s.truth_unit);
  return static_cast<int>(seen.size());
}

// ---------------------------------------------------------------------------
// End-to-end decode (in-memory, used by tests and the CLI stages)
// ---------------------------------------------------------------------------

struct TrialTensors {
  MultiChannelSignal features;  // F x N @ feature rate
  MultiChannelSignal force;     // 1 x N @ feature rate, %MVF
};

inline dsp::WindowedDataset windows_for_trial(const TrialTensors& t, const PipelineConfig& cfg) {
  const Eigen::Index n = std::min(t.features.samples(), t.force.samples());
  MultiChannelSignal f = t.features;
  f.data = f.data.leftCols(n).eval();
  MultiChannelSignal g = t.force;
  g.data = g.data.leftCols(n).eval();
  return dsp::make_windows(f, g, cfg.window_len, cfg.stride, cfg.shift_ms);
}

struct DecodeData {
  train::DecoderDataset train, val;
  std::vector<train::DecoderDataset> test_trials;
  dsp::NormStats input_stats, target_stats;
  int n_features = 0;
};

/// Builds the standardized train/val/test window sets. Normalization stats are
/// fitted on the training split only.
inline DecodeData build_decode_data(const std::vector<TrialTensors>& trials,
                                    const train::TrialSplit& split,
                                    const PipelineConfig& cfg) {
  auto collect = [&](const std::vector<int>& idx) {
    dsp::WindowedDataset all;
    for (int i : idx) {
      dsp::WindowedDataset w = windows_for_trial(trials[static_cast<size_t>(i)], cfg);
      all.window_len = w.window_len;
      all.stride = w.stride;
      all.feature_rate_hz = w.feature_rate_hz;
      for (auto& m : w.inputs) all.inputs.push_back(std::move(m));
      for (auto& v : w.targets) all.targets.push_back(std::move(v));
    }
    return all;
  };

  DecodeData d;
  const dsp::WindowedDataset train_w = collect(split.train);
  const dsp::WindowedDataset val_w = collect(split.val);
  if (train_w.inputs.empty()) throw DataError("build_decode_data: empty training split");
  d.n_features = static_cast<int>(train_w.inputs[0].rows());
  train::fit_window_stats(train_w, d.input_stats, d.target_stats);
  d.train = train::standardize_windows(train_w, d.input_stats, d.target_stats);
  d.val = train::standardize_windows(val_w, d.input_stats, d.target_stats);
  for (int i : split.test) {
    const dsp::WindowedDataset w = windows_for_trial(trials[static_cast<size_t>(i)], cfg);
    d.test_trials.push_back(train::standardize_windows(w, d.input_stats, d.target_stats));
  }
  return d;
}

template <class T>
models::Model<T> build_model(const PipelineConfig& cfg, int n_features) {
  if (cfg.model == "tcn") {
    models::TcnConfig c = cfg.tcn;
    c.in_features = n_features;
    return models::build_tcn<T>(c, cfg.master_seed);
  }
  models::SnnConfig c = cfg.snn;
  c.in_features = n_features;
  return models::build_snn<T>(c, cfg.master_seed);
}

template <class T>
train::TrainReport train_and_evaluate(models::Model<T>& model, const DecodeData& data,
                                      const PipelineConfig& cfg) {
  train::TrainReport report = train::fit(model, data.train, data.val, cfg.train_options());
  if (!data.test_trials.empty()) {
    report.test_trials = train::evaluate(model, data.test_trials, data.target_stats,
                                         &report.mean_rmse_pct_mvf, &report.mean_pearson_r);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoint metadata
// ---------------------------------------------------------------------------

inline nlohmann::json stats_to_json(const dsp::NormStats& s) {
  std::vector<double> mean(s.mean.data(), s.mean.data() + s.mean.size());
  std::vector<double> sd(s.std.data(), s.std.data() + s.std.size());
  return {{"mean", mean}, {"std", sd}};
}

inline dsp::NormStats stats_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  dsp::NormStats s;
  s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  return s;
}

template <class T>
io::Checkpoint make_checkpoint(const models::Model<T>& model, const PipelineConfig& cfg,
                               const DecodeData& data) {
  io::Checkpoint ck;
  nlohmann::json meta = {{"arch", model.arch},
                         {"in_features", model.in_features},
                         {"feature_mode", cfg.feature_mode},
                         {"tcn", cfg.tcn},
                         {"snn", cfg.snn},
                         {"input_stats", stats_to_json(data.input_stats)},
                         {"target_stats", stats_to_json(data.target_stats)}};
  ck.metadata_json = meta.dump();
  for (size_t p = 0; p < model.params.size(); ++p) {
    ck.names.push_back(model.param_names[p]);
    ck.shapes.push_back(model.params[p]->shape);
    std::vector<float> vals(model.params[p]->values.size());
    for (size_t i = 0; i < vals.size(); ++i)
      vals[i] = static_cast<float>(model.params[p]->values[i]);
    ck.values.push_back(std::move(vals));
  }
  return ck;
}

template <class T>
struct LoadedModel {
  models::Model<T> model;
  dsp::NormStats input_stats, target_stats;
  std::string feature_mode;
};

template <class T>
LoadedModel<T> load_model(const io::Checkpoint& ck) {
  nlohmann::json meta = nlohmann::json::parse(ck.metadata_json);
  LoadedModel<T> lm;
  const auto arch = meta.at("arch").get<std::string>();
  const int in_features = meta.at("in_features").get<int>();
  if (arch == "tcn") {
    auto cfg = meta.at("tcn").get<models::TcnConfig>();
    cfg.in_features = in_features;
    lm.model = models::build_tcn<T>(cfg, 0);
  } else if (arch == "snn") {
    auto cfg = meta.at("snn").get<models::SnnConfig>();
    cfg.in_features = in_features;
    lm.model = models::build_snn<T>(cfg, 0);
  } else {
    throw DataError("load_model: unknown architecture '" + arch + "'");
  }
  lm.input_stats = stats_from_json(meta.at("input_stats"));
  lm.target_stats = stats_from_json(meta.at("target_stats"));
  lm.feature_mode = meta.value("feature_mode", "per_group");

  if (ck.names.size() != lm.model.params.size())
    throw DataError("load_model: checkpoint has " + std::to_string(ck.names.size()) +
                    " parameters, model expects " + std::to_string(lm.model.params.size()));
  for (size_t p = 0; p < ck.names.size(); ++p) {
    if (ck.names[p] != lm.model.param_names[p])
      throw DataError("load_model: parameter name mismatch: '" + ck.names[p] + "' vs '" +
                      lm.model.param_names[p] + "'");
    if (ck.values[p].size() != lm.model.params[p]->values.size())
      throw DataError("load_model: size mismatch for '" + ck.names[p] + "'");
    for (size_t i = 0; i < ck.values[p].size(); ++i)
      lm.model.params[p]->values[i] = static_cast<T>(ck.values[p][i]);
  }
  return lm;
}

}  // namespace mudec::pipeline
