#pragma once

#include "mudec/decomp.hpp"
#include "mudec/models.hpp"
#include "mudec/signal.hpp"
#include "mudec/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <string>

namespace mudec {

/// Everything the pipeline needs, with defaults pinned to the reference
/// recording protocol (2048 Hz EMG, 200 Hz features, T=256/stride 128 windows,
/// +80 ms force shift, 6/2/2 trial split).
struct PipelineConfig {
  // Data source
  std::string scenario = "easy";  // easy | medium | hard
  std::uint64_t data_seed = 1234;

  // DSP
  double notch_f0_hz = 60.0;
  double notch_q = 35.0;
  int highpass_order = 6;
  double highpass_fc_hz = 20.0;
  double force_lowpass_fc_hz = 10.0;
  int force_lowpass_order = 4;
  double feature_rate_hz = 200.0;

  // Decomposition
  int per_subregion = 4;
  int n_sources = 0;  // 0 = retained whitening components, capped at 30
  double ica_tol = 1e-4;
  int ica_max_iter = 100;
  double silhouette_cutoff = 0.85;
  double duplicate_corr_threshold = 0.5;
  std::string kernel_shape = "hann";
  double kernel_length_ms = 400.0;
  std::string feature_mode = "per_group";  // per_group | per_mu
  int delay_embed = 0;  // delayed-copy extension order, 0 = off
  std::uint64_t ica_seed = 7;

  // Windowing
  int window_len = 256;
  int stride = 128;
  double shift_ms = 80.0;

  // Split
  int n_train_trials = 6;
  int n_val_trials = 2;
  int n_test_trials = 2;
  std::uint64_t split_seed = 0;

  // Model
  std::string model = "tcn";  // tcn | snn
  models::TcnConfig tcn;
  models::SnnConfig snn;

  // Training
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 80;
  int patience = 10;
  double min_delta = 1e-5;
  std::uint64_t master_seed = 0;

  void validate() const {
    if (scenario != "easy" && scenario != "medium" && scenario != "hard")
      throw ParameterError("config: unknown scenario '" + scenario + "'");
    if (feature_mode != "per_group" && feature_mode != "per_mu")
      throw ParameterError("config: feature_mode must be per_group or per_mu");
    if (model != "tcn" && model != "snn")
      throw ParameterError("config: model must be tcn or snn");
    if (window_len < 1 || stride < 1) throw ParameterError("config: bad window/stride");
  }

  // The master seed governs training-time randomness (init, shuffling,
  // dropout). Data, ICA, and split seeds are configured separately so the
  // same decomposition output can be reused across decoder seeds.
  void apply_master_seed(std::uint64_t s) { master_seed = s; }

  decomp::KernelDescriptor kernel() const { return {kernel_shape, kernel_length_ms}; }
  train::TrainOptions train_options() const {
    train::TrainOptions o;
    o.lr = lr;
    o.batch_size = batch_size;
    o.max_epochs = max_epochs;
    o.patience = patience;
    o.min_delta = min_delta;
    o.seed = master_seed;
    return o;
  }
};

namespace models {
inline void to_json(nlohmann::json& j, const TcnConfig& c) {
  j = {{"in_features", c.in_features}, {"width", c.width},         {"kernel", c.kernel},
       {"dilations", c.dilations},     {"dropout", c.dropout}};
}
inline void from_json(const nlohmann::json& j, TcnConfig& c) {
  j.at("in_features").get_to(c.in_features);
  j.at("width").get_to(c.width);
  j.at("kernel").get_to(c.kernel);
  j.at("dilations").get_to(c.dilations);
  j.at("dropout").get_to(c.dropout);
}
inline void to_json(nlohmann::json& j, const SnnConfig& c) {
  j = {{"in_features", c.in_features},
       {"width", c.width},
       {"kernel", c.kernel},
       {"dilations", c.dilations},
       {"beta_m", c.beta_m},
       {"v_th", c.v_th},
       {"surrogate_slope", c.surrogate_slope},
       {"alpha_init", c.alpha_init}};
}
inline void from_json(const nlohmann::json& j, SnnConfig& c) {
  j.at("in_features").get_to(c.in_features);
  j.at("width").get_to(c.width);
  j.at("kernel").get_to(c.kernel);
  j.at("dilations").get_to(c.dilations);
  j.at("beta_m").get_to(c.beta_m);
  j.at("v_th").get_to(c.v_th);
  j.at("surrogate_slope").get_to(c.surrogate_slope);
  j.at("alpha_init").get_to(c.alpha_init);
}
}  // namespace models

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = {{"scenario", c.scenario},
       {"data_seed", c.data_seed},
       {"dsp",
        {{"notch_f0_hz", c.notch_f0_hz},
         {"notch_q", c.notch_q},
         {"highpass_order", c.highpass_order},
         {"highpass_fc_hz", c.highpass_fc_hz},
         {"force_lowpass_fc_hz", c.force_lowpass_fc_hz},
         {"force_lowpass_order", c.force_lowpass_order},
         {"feature_rate_hz", c.feature_rate_hz}}},
       {"decomp",
        {{"per_subregion", c.per_subregion},
         {"n_sources", c.n_sources},
         {"ica_tol", c.ica_tol},
         {"ica_max_iter", c.ica_max_iter},
         {"silhouette_cutoff", c.silhouette_cutoff},
         {"duplicate_corr_threshold", c.duplicate_corr_threshold},
         {"kernel_shape", c.kernel_shape},
         {"kernel_length_ms", c.kernel_length_ms},
         {"feature_mode", c.feature_mode},
         {"delay_embed", c.delay_embed},
         {"ica_seed", c.ica_seed}}},
       {"window", {{"T", c.window_len}, {"stride", c.stride}, {"shift_ms", c.shift_ms}}},
       {"split",
        {{"train", c.n_train_trials},
         {"val", c.n_val_trials},
         {"test", c.n_test_trials},
         {"seed", c.split_seed}}},
       {"model", c.model},
       {"tcn", c.tcn},
       {"snn", c.snn},
       {"train",
        {{"lr", c.lr},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"patience", c.patience},
         {"min_delta", c.min_delta},
         {"master_seed", c.master_seed}}}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  j.at("scenario").get_to(c.scenario);
  j.at("data_seed").get_to(c.data_seed);
  const auto& d = j.at("dsp");
  d.at("notch_f0_hz").get_to(c.notch_f0_hz);
  d.at("notch_q").get_to(c.notch_q);
  d.at("highpass_order").get_to(c.highpass_order);
  d.at("highpass_fc_hz").get_to(c.highpass_fc_hz);
  d.at("force_lowpass_fc_hz").get_to(c.force_lowpass_fc_hz);
  d.at("force_lowpass_order").get_to(c.force_lowpass_order);
  d.at("feature_rate_hz").get_to(c.feature_rate_hz);
  const auto& dc = j.at("decomp");
  dc.at("per_subregion").get_to(c.per_subregion);
  dc.at("n_sources").get_to(c.n_sources);
  dc.at("ica_tol").get_to(c.ica_tol);
  dc.at("ica_max_iter").get_to(c.ica_max_iter);
  dc.at("silhouette_cutoff").get_to(c.silhouette_cutoff);
  dc.at("duplicate_corr_threshold").get_to(c.duplicate_corr_threshold);
  dc.at("kernel_shape").get_to(c.kernel_shape);
  dc.at("kernel_length_ms").get_to(c.kernel_length_ms);
  dc.at("feature_mode").get_to(c.feature_mode);
  c.delay_embed = dc.value("delay_embed", 0);
  dc.at("ica_seed").get_to(c.ica_seed);
  const auto& w = j.at("window");
  w.at("T").get_to(c.window_len);
  w.at("stride").get_to(c.stride);
  w.at("shift_ms").get_to(c.shift_ms);
  const auto& s = j.at("split");
  s.at("train").get_to(c.n_train_trials);
  s.at("val").get_to(c.n_val_trials);
  s.at("test").get_to(c.n_test_trials);
  s.at("seed").get_to(c.split_seed);
  j.at("model").get_to(c.model);
  j.at("tcn").get_to(c.tcn);
  j.at("snn").get_to(c.snn);
  const auto& t = j.at("train");
  t.at("lr").get_to(c.lr);
  t.at("batch_size").get_to(c.batch_size);
  t.at("max_epochs").get_to(c.max_epochs);
  t.at("patience").get_to(c.patience);
  t.at("min_delta").get_to(c.min_delta);
  t.at("master_seed").get_to(c.master_seed);
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("config parse error in " + path + ": " + e.what());
  }
  PipelineConfig c;
  try {
    j.get_to(c);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("config field error in " + path + ": " + e.what());
  }
  c.validate();
  return c;
}

inline void save_config(const PipelineConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config: " + path);
  nlohmann::json j = c;
  out << j.dump(2) << "\n";
}

}  // namespace mudec
