#pragma once

#include "mudec/config.hpp"
#include "mudec/container.hpp"
#include "mudec/pipeline.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace mudec::stages {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string trial_name(int t, const std::string& kind) {
  std::ostringstream os;
  os << "trial_" << std::setw(2) << std::setfill('0') << t << "_" << kind;
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write: " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("JSON parse error in " + path + ": " + e.what());
  }
  return j;
}

// ---------------------------------------------------------------------------
// Spike set <-> JSON
// ---------------------------------------------------------------------------

inline json spikes_to_json(const SpikeTrainSet& s) {
  json units = json::array();
  for (size_t u = 0; u < s.units.size(); ++u) {
    units.push_back({{"label", u < s.unit_labels.size() ? s.unit_labels[u] : ""},
                     {"indices", s.units[u].indices},
                     {"silhouette", s.units[u].quality.silhouette},
                     {"force_corr", s.units[u].quality.force_corr},
                     {"converged", s.units[u].quality.converged}});
  }
  return {{"sample_rate_hz", s.sample_rate_hz}, {"n_samples", s.n_samples}, {"units", units}};
}

inline SpikeTrainSet spikes_from_json(const json& j) {
  SpikeTrainSet s;
  j.at("sample_rate_hz").get_to(s.sample_rate_hz);
  j.at("n_samples").get_to(s.n_samples);
  for (const auto& u : j.at("units")) {
    SpikeTrain t;
    u.at("indices").get_to(t.indices);
    t.quality.silhouette = u.value("silhouette", -1.0);
    t.quality.force_corr = u.value("force_corr", 0.0);
    t.quality.converged = u.value("converged", true);
    s.units.push_back(std::move(t));
    s.unit_labels.push_back(u.value("label", ""));
  }
  return s;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generates the configured scenario into out_dir: per-trial EMG/force
/// containers, truth spikes, and a manifest listing trials and seeds.
inline void cmd_synth(const PipelineConfig& cfg, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const synth::Scenario sc = synth::default_scenario(cfg.scenario, cfg.data_seed);

  json manifest;
  manifest["scenario"] = sc.name;
  manifest["data_seed"] = cfg.data_seed;
  manifest["snr_db"] = sc.snr_db;
  manifest["truth_available"] = true;
  manifest["channel_groups"] = sc.mix.channel_groups;
  json trials = json::array();
  for (size_t t = 0; t < sc.trials.size(); ++t) {
    const synth::Trial trial = synth::generate_trial(sc.pool, sc.mix, sc.trials[t]);
    const std::string emg_file = trial_name(static_cast<int>(t), "emg.mdc");
    const std::string force_file = trial_name(static_cast<int>(t), "force.mdc");
    const std::string spike_file = trial_name(static_cast<int>(t), "truth_spikes.json");
    try {
      io::write_signal(trial.emg, (fs::path(out_dir) / emg_file).string());
      io::write_signal(trial.force, (fs::path(out_dir) / force_file).string());
      write_text((fs::path(out_dir) / spike_file).string(),
                 spikes_to_json(trial.truth_spikes).dump());
    } catch (const DataError& e) {
      throw DataError(std::string("synth: ") + e.what());
    }
    trials.push_back({{"index", t},
                      {"seed", sc.trials[t].seed},
                      {"emg", emg_file},
                      {"force", force_file},
                      {"truth_spikes", spike_file}});
  }
  manifest["trials"] = trials;
  write_text((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

struct DecomposeResult {
  pipeline::DecompositionModel model;
  std::vector<std::vector<pipeline::RecoveryScore>> roa_per_trial;  // empty without truth
  int trials_processed = 0;
};

/// Fits decomposition on the training trials (per the configured split) and
/// applies the frozen transforms to every trial, writing per-trial drive and
/// force-at-feature-rate containers plus a quality report.
inline DecomposeResult cmd_decompose(const PipelineConfig& cfg, const std::string& in_dir,
                                     const std::string& out_dir,
                                     const std::function<void(const std::string&)>& log = {}) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const json manifest = read_json((fs::path(in_dir) / "manifest.json").string());
  const auto trials = manifest.at("trials");
  const int n_trials = static_cast<int>(trials.size());
  const bool truth = manifest.value("truth_available", false);

  decomp::ChannelGroups groups;
  manifest.at("channel_groups").get_to(groups);

  const train::TrialSplit split = train::split_trials(
      n_trials, cfg.n_train_trials, cfg.n_val_trials, cfg.n_test_trials, cfg.split_seed);

  auto load_trial = [&](int t) {
    const auto& entry = trials.at(static_cast<size_t>(t));
    MultiChannelSignal emg =
        io::read_signal((fs::path(in_dir) / entry.at("emg").get<std::string>()).string());
    MultiChannelSignal force =
        io::read_signal((fs::path(in_dir) / entry.at("force").get<std::string>()).string());
    return std::pair{std::move(emg), std::move(force)};
  };

  // Fit on training trials only.
  std::vector<MultiChannelSignal> train_emg, train_force;
  for (int t : split.train) {
    auto [emg, force] = load_trial(t);
    train_emg.push_back(pipeline::preprocess_emg(emg, cfg));
    train_force.push_back(pipeline::preprocess_force(force, cfg));
  }
  DecomposeResult result;
  result.model = pipeline::fit_decomposition(train_emg, train_force, groups, cfg, log);
  train_emg.clear();
  train_force.clear();

  std::ostringstream report;
  report << "decomposition report\n";
  report << "scenario: " << manifest.value("scenario", "?") << "\n";
  report << "selected channels: " << result.model.selected_channels.size() << "\n";
  report << "whitening components: " << result.model.whitening.retained_components << "\n";
  report << "sources run: " << result.model.n_sources_run
         << "  converged: " << result.model.n_converged << "\n";
  report << "units retained: " << result.model.n_units() << "\n";
  report << "frozen transforms: yes\n\n";
  report << "unit  silhouette  force_corr" << (truth ? "  roa  truth_unit" : "") << "\n";

  auto is_train = [&](int t) {
    return std::find(split.train.begin(), split.train.end(), t) != split.train.end();
  };

  json quality;
  quality["units"] = json::array();
  for (int u = 0; u < result.model.n_units(); ++u)
    quality["units"].push_back({{"silhouette", result.model.fit_silhouette[static_cast<size_t>(u)]},
                                {"force_corr", result.model.fit_force_corr[static_cast<size_t>(u)]},
                                {"group", result.model.unit_group[static_cast<size_t>(u)]}});

  json out_trials = json::array();
  for (int t = 0; t < n_trials; ++t) {
    auto [emg, force] = load_trial(t);
    const MultiChannelSignal emg_pre = pipeline::preprocess_emg(emg, cfg);
    const SpikeTrainSet spikes = pipeline::apply_decomposition(result.model, emg_pre);
    const MultiChannelSignal features = pipeline::trial_features(spikes, result.model, cfg);
    const MultiChannelSignal force200 = pipeline::force_at_feature_rate(force, cfg);

    const std::string drive_file = trial_name(t, "drive.mdc");
    const std::string force_file = trial_name(t, "force200.mdc");
    const std::string spike_file = trial_name(t, "spikes.json");
    io::write_signal(features, (fs::path(out_dir) / drive_file).string());
    io::write_signal(force200, (fs::path(out_dir) / force_file).string());
    write_text((fs::path(out_dir) / spike_file).string(), spikes_to_json(spikes).dump());
    out_trials.push_back({{"index", t},
                          {"drive", drive_file},
                          {"force", force_file},
                          {"spikes", spike_file},
                          {"role", is_train(t) ? "train" : "heldout"}});

    if (truth) {
      const SpikeTrainSet truth_spikes = spikes_from_json(read_json(
          (fs::path(in_dir) / trials.at(static_cast<size_t>(t)).at("truth_spikes").get<std::string>())
              .string()));
      result.roa_per_trial.push_back(pipeline::score_against_truth(spikes, truth_spikes));
    }
    ++result.trials_processed;
  }

  for (int u = 0; u < result.model.n_units(); ++u) {
    report << std::setw(4) << u << "  " << std::fixed << std::setprecision(3)
           << result.model.fit_silhouette[static_cast<size_t>(u)] << "       "
           << result.model.fit_force_corr[static_cast<size_t>(u)];
    if (truth && !result.roa_per_trial.empty()) {
      // RoA on the first training trial as the representative fit-quality view.
      const auto& sc = result.roa_per_trial[static_cast<size_t>(split.train[0])];
      if (u < static_cast<int>(sc.size()))
        report << "       " << sc[static_cast<size_t>(u)].roa << "  "
               << sc[static_cast<size_t>(u)].truth_unit;
    }
    report << "\n";
  }

  json out_manifest;
  out_manifest["source_manifest"] = (fs::path(in_dir) / "manifest.json").string();
  out_manifest["feature_mode"] = cfg.feature_mode;
  out_manifest["n_units"] = result.model.n_units();
  out_manifest["split"] = {{"train", split.train}, {"val", split.val}, {"test", split.test}};
  out_manifest["trials"] = out_trials;
  out_manifest["truth_available"] = truth;
  write_text((fs::path(out_dir) / "manifest.json").string(), out_manifest.dump(2) + "\n");
  write_text((fs::path(out_dir) / "decomp_report.txt").string(), report.str());
  write_text((fs::path(out_dir) / "quality.json").string(), quality.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// dataset / train / eval
// ---------------------------------------------------------------------------

inline std::vector<pipeline::TrialTensors> load_trial_tensors(const std::string& drive_dir) {
  const json manifest = read_json((fs::path(drive_dir) / "manifest.json").string());
  std::vector<pipeline::TrialTensors> out;
  for (const auto& entry : manifest.at("trials")) {
    pipeline::TrialTensors t;
    t.features =
        io::read_signal((fs::path(drive_dir) / entry.at("drive").get<std::string>()).string());
    t.force =
        io::read_signal((fs::path(drive_dir) / entry.at("force").get<std::string>()).string());
    out.push_back(std::move(t));
  }
  return out;
}

/// Builds the windowed dataset and writes a summary (window counts and
/// train-split normalization stats). A reporting stage; train rebuilds the
/// same dataset from the drive files, so each stage remains restartable.
inline json cmd_dataset(const PipelineConfig& cfg, const std::string& drive_dir,
                        const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const std::vector<pipeline::TrialTensors> trials = load_trial_tensors(drive_dir);
  const train::TrialSplit split =
      train::split_trials(static_cast<int>(trials.size()), cfg.n_train_trials, cfg.n_val_trials,
                          cfg.n_test_trials, cfg.split_seed);
  const pipeline::DecodeData data = pipeline::build_decode_data(trials, split, cfg);
  json summary = {{"n_features", data.n_features},
                  {"window_len", cfg.window_len},
                  {"stride", cfg.stride},
                  {"shift_ms", cfg.shift_ms},
                  {"train_windows", data.train.size()},
                  {"val_windows", data.val.size()},
                  {"test_trials", data.test_trials.size()},
                  {"input_stats", pipeline::stats_to_json(data.input_stats)},
                  {"target_stats", pipeline::stats_to_json(data.target_stats)}};
  write_text((fs::path(out_dir) / "dataset_summary.json").string(), summary.dump(2) + "\n");
  return summary;
}

inline json report_to_json(const train::TrainReport& r) {
  json trials = json::array();
  for (const auto& m : r.test_trials)
    trials.push_back({{"rmse_pct_mvf", m.rmse_pct_mvf},
                      {"pearson_r", m.pearson_r},
                      {"r_degenerate", m.r_degenerate}});
  return {{"train_loss", r.train_loss},
          {"val_loss", r.val_loss},
          {"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"test_trials", trials},
          {"mean_rmse_pct_mvf", r.mean_rmse_pct_mvf},
          {"mean_pearson_r", r.mean_pearson_r}};
}

inline std::string metrics_table(const train::TrainReport& r, const std::string& model_name) {
  std::ostringstream os;
  os << "model   trial   rmse_pct_mvf   pearson_r\n";
  os << std::fixed;
  for (size_t t = 0; t < r.test_trials.size(); ++t) {
    os << model_name << "   " << t << "       " << std::setprecision(2)
       << r.test_trials[t].rmse_pct_mvf << "           " << std::setprecision(3)
       << r.test_trials[t].pearson_r;
    if (r.test_trials[t].r_degenerate) os << " (degenerate)";
    os << "\n";
  }
  os << model_name << "   mean    " << std::setprecision(2) << r.mean_rmse_pct_mvf
     << "           " << std::setprecision(3) << r.mean_pearson_r << "\n";
  return os.str();
}

template <class T>
train::TrainReport cmd_train(const PipelineConfig& cfg, const std::string& drive_dir,
                             const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const std::vector<pipeline::TrialTensors> trials = load_trial_tensors(drive_dir);
  const train::TrialSplit split =
      train::split_trials(static_cast<int>(trials.size()), cfg.n_train_trials, cfg.n_val_trials,
                          cfg.n_test_trials, cfg.split_seed);
  const pipeline::DecodeData data = pipeline::build_decode_data(trials, split, cfg);
  models::Model<T> model = pipeline::build_model<T>(cfg, data.n_features);
  const train::TrainReport report = pipeline::train_and_evaluate(model, data, cfg);

  io::write_checkpoint(pipeline::make_checkpoint(model, cfg, data),
                       (fs::path(out_dir) / "checkpoint.mdp").string());
  json jr = report_to_json(report);
  jr["model"] = cfg.model;
  write_text((fs::path(out_dir) / "train_report.json").string(), jr.dump(2) + "\n");
  std::ostringstream txt;
  txt << metrics_table(report, cfg.model) << "best epoch: " << report.best_epoch
      << "  best val loss: " << report.best_val_loss << "\n";
  write_text((fs::path(out_dir) / "train_report.txt").string(), txt.str());
  return report;
}

template <class T>
train::TrainReport cmd_eval(const PipelineConfig& cfg, const std::string& checkpoint_path,
                            const std::string& drive_dir) {
  const pipeline::LoadedModel<T> lm =
      pipeline::load_model<T>(io::read_checkpoint(checkpoint_path));
  const std::vector<pipeline::TrialTensors> trials = load_trial_tensors(drive_dir);
  const train::TrialSplit split =
      train::split_trials(static_cast<int>(trials.size()), cfg.n_train_trials, cfg.n_val_trials,
                          cfg.n_test_trials, cfg.split_seed);
  if (!trials.empty() && trials[0].features.channels() != lm.model.in_features)
    throw DataError("eval: drives have " + std::to_string(trials[0].features.channels()) +
                    " features but checkpoint expects " +
                    std::to_string(lm.model.in_features));

  train::TrainReport report;
  std::vector<train::DecoderDataset> test;
  for (int t : split.test) {
    const dsp::WindowedDataset w =
        pipeline::windows_for_trial(trials[static_cast<size_t>(t)], cfg);
    test.push_back(train::standardize_windows(w, lm.input_stats, lm.target_stats));
  }
  report.test_trials = train::evaluate(lm.model, test, lm.target_stats,
                                       &report.mean_rmse_pct_mvf, &report.mean_pearson_r);
  return report;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

inline std::string render_svg(const Eigen::VectorXd& time_s, const Eigen::VectorXd& measured,
                              const Eigen::VectorXd& predicted, const std::string& caption) {
  const double w = 900, h = 420, ml = 60, mr = 20, mt = 30, mb = 70;
  const double tmin = time_s.minCoeff(), tmax = time_s.maxCoeff();
  double ymin = std::min(measured.minCoeff(), predicted.minCoeff());
  double ymax = std::max(measured.maxCoeff(), predicted.maxCoeff());
  if (ymax - ymin < 1e-9) ymax = ymin + 1.0;
  const double px = (w - ml - mr) / std::max(tmax - tmin, 1e-9);
  const double py = (h - mt - mb) / (ymax - ymin);
  auto X = [&](double t) { return ml + (t - tmin) * px; };
  auto Y = [&](double y) { return h - mb - (y - ymin) * py; };
  auto polyline = [&](const Eigen::VectorXd& v, const std::string& color) {
    std::ostringstream os;
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.2' points='";
    const Eigen::Index step = std::max<Eigen::Index>(1, v.size() / 4000);
    for (Eigen::Index i = 0; i < v.size(); i += step)
      os << X(time_s(i)) << "," << Y(v(i)) << " ";
    os << "'/>\n";
    return os.str();
  };
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  svg << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  svg << "<text x='" << w / 2 << "' y='" << h - mb + 35
      << "' text-anchor='middle' font-size='13'>time (s)</text>\n";
  svg << "<text x='18' y='" << (h - mb + mt) / 2
      << "' text-anchor='middle' font-size='13' transform='rotate(-90 18 "
      << (h - mb + mt) / 2 << ")'>force (%MVF)</text>\n";
  svg << polyline(measured, "#1f77b4") << polyline(predicted, "#d62728");
  svg << "<text x='" << ml + 10 << "' y='" << mt - 10 << "' font-size='12' fill='#1f77b4'>"
      << "measured</text>\n";
  svg << "<text x='" << ml + 90 << "' y='" << mt - 10 << "' font-size='12' fill='#d62728'>"
      << "predicted</text>\n";
  svg << "<text x='" << w / 2 << "' y='" << h - 12 << "' text-anchor='middle' font-size='12'>"
      << caption << "</text>\n</svg>\n";
  return svg.str();
}

/// Predicted-vs-measured overlay for one trial: SVG plus a CSV with columns
/// (time_s, measured_pct_mvf, predicted_pct_mvf).
template <class T>
void cmd_plot(const PipelineConfig& cfg, const std::string& checkpoint_path,
              const std::string& drive_dir, int trial_index, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const pipeline::LoadedModel<T> lm =
      pipeline::load_model<T>(io::read_checkpoint(checkpoint_path));
  const std::vector<pipeline::TrialTensors> trials = load_trial_tensors(drive_dir);
  if (trial_index < 0 || trial_index >= static_cast<int>(trials.size()))
    throw ParameterError("plot: trial index out of range");
  const pipeline::TrialTensors& trial = trials[static_cast<size_t>(trial_index)];
  if (trial.features.channels() != lm.model.in_features)
    throw DataError("plot: drives have " + std::to_string(trial.features.channels()) +
                    " features but checkpoint expects " + std::to_string(lm.model.in_features));

  // Non-overlapping windows give one prediction per time sample.
  PipelineConfig plot_cfg = cfg;
  plot_cfg.stride = cfg.window_len;
  const dsp::WindowedDataset w = pipeline::windows_for_trial(trial, plot_cfg);
  const train::DecoderDataset ds =
      train::standardize_windows(w, lm.input_stats, lm.target_stats);

  const Eigen::Index T_len = cfg.window_len;
  const auto n = static_cast<Eigen::Index>(ds.size()) * T_len;
  Eigen::VectorXd time_s(n), measured(n), predicted(n);
  for (size_t k = 0; k < ds.size(); ++k) {
    const Eigen::VectorXd y = models::predict_window(lm.model, ds.inputs[k], &lm.target_stats);
    for (Eigen::Index t = 0; t < T_len; ++t) {
      const Eigen::Index i = static_cast<Eigen::Index>(k) * T_len + t;
      time_s(i) = static_cast<double>(i) / cfg.feature_rate_hz;
      measured(i) = ds.targets_raw[k](t);
      predicted(i) = y(t);
    }
  }

  bool degenerate = false;
  const double r = stats::pearson(predicted, measured, &degenerate);
  const double rmse = stats::rmse(predicted, measured);
  std::ostringstream caption;
  caption << "trial " << trial_index << "  " << lm.model.arch << ": RMSE " << std::fixed
          << std::setprecision(2) << rmse << " %MVF, r " << std::setprecision(3)
          << (degenerate ? 0.0 : r);

  std::ostringstream csv;
  csv << "time_s,measured_pct_mvf,predicted_pct_mvf\n";
  for (Eigen::Index i = 0; i < n; ++i)
    csv << time_s(i) << "," << measured(i) << "," << predicted(i) << "\n";

  const std::string base = "trial_" + std::to_string(trial_index) + "_" + lm.model.arch;
  write_text((fs::path(out_dir) / (base + ".svg")).string(),
             render_svg(time_s, measured, predicted, caption.str()));
  write_text((fs::path(out_dir) / (base + ".csv")).string(), csv.str());
}

}  // namespace mudec::stages
