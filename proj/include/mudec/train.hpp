#pragma once

#include "mudec/dsp.hpp"
#include "mudec/models.hpp"
#include "mudec/stats.hpp"
#include "mudec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace mudec::train {

using models::Model;
using tensor::Graph;
using tensor::TensorPtr;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class T>
struct OptimizerState {
  std::vector<std::vector<T>> m;  // first moments, one array per parameter
  std::vector<std::vector<T>> v;  // second moments
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(const std::vector<TensorPtr<T>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p->values.size(), T(0));
      v.emplace_back(p->values.size(), T(0));
    }
    step = 0;
  }
};

/// Standard bias-corrected Adam update from the gradients currently stored on
/// the parameters. Throws on non-finite gradients.
template <class T>
void adam_step(std::vector<TensorPtr<T>>& params, OptimizerState<T>& state) {
  if (state.m.size() != params.size()) state.init(params);
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& par = *params[p];
    par.ensure_grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < par.values.size(); ++i) {
      const double g = static_cast<double>(par.grad[i]);
      if (!std::isfinite(g))
        throw NumericalError("adam_step: non-finite gradient in parameter " +
                             std::to_string(p) + " at index " + std::to_string(i));
      m[i] = static_cast<T>(state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * g);
      v[i] = static_cast<T>(state.beta2 * static_cast<double>(v[i]) +
                            (1.0 - state.beta2) * g * g);
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      par.values[i] -= static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Datasets and splitting
// ---------------------------------------------------------------------------

/// Windows ready for the decoder: inputs standardized with train-split stats,
/// targets kept both standardized (for the loss) and raw %MVF (for metrics).
struct DecoderDataset {
  std::vector<Eigen::MatrixXd> inputs;        // F x T, standardized
  std::vector<Eigen::VectorXd> targets_norm;  // T, standardized
  std::vector<Eigen::VectorXd> targets_raw;   // T, %MVF

  size_t size() const { return inputs.size(); }
};

/// Fits z-score stats from the training windows only (flattening time into the
/// sample axis).
inline void fit_window_stats(const dsp::WindowedDataset& train_windows,
                             dsp::NormStats& input_stats, dsp::NormStats& target_stats) {
  if (train_windows.inputs.empty()) throw DataError("fit_window_stats: empty training split");
  const Eigen::Index F = train_windows.inputs[0].rows();
  const Eigen::Index T = train_windows.window_len;
  const auto n = static_cast<Eigen::Index>(train_windows.size()) * T;
  Eigen::MatrixXd feats(n, F);
  Eigen::MatrixXd targs(n, 1);
  for (size_t w = 0; w < train_windows.size(); ++w) {
    feats.middleRows(static_cast<Eigen::Index>(w) * T, T) =
        train_windows.inputs[w].transpose();
    targs.col(0).segment(static_cast<Eigen::Index>(w) * T, T) = train_windows.targets[w];
  }
  input_stats = dsp::zscore_fit(feats);
  target_stats = dsp::zscore_fit(targs);
}

inline DecoderDataset standardize_windows(const dsp::WindowedDataset& windows,
                                          const dsp::NormStats& input_stats,
                                          const dsp::NormStats& target_stats) {
  DecoderDataset ds;
  for (size_t w = 0; w < windows.size(); ++w) {
    Eigen::MatrixXd in = windows.inputs[w];
    for (Eigen::Index f = 0; f < in.rows(); ++f)
      in.row(f) = (in.row(f).array() - input_stats.mean(f)) / input_stats.std(f);
    ds.inputs.push_back(std::move(in));
    ds.targets_raw.push_back(windows.targets[w]);
    ds.targets_norm.push_back(
        (windows.targets[w].array() - target_stats.mean(0)) / target_stats.std(0));
  }
  return ds;
}

struct TrialSplit {
  std::vector<int> train, val, test;
};

/// Deterministic disjoint partition of trial indices into the given scheme.
inline TrialSplit split_trials(int n_trials, int n_train, int n_val, int n_test,
                               std::uint64_t seed) {
  if (n_train + n_val + n_test > n_trials)
    throw DataError("split_trials: scheme needs " + std::to_string(n_train + n_val + n_test) +
                    " trials, only " + std::to_string(n_trials) + " available");
  std::vector<int> idx(static_cast<size_t>(n_trials));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  TrialSplit s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.begin() + n_train + n_val + n_test);
  return s;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 80;
  int patience = 10;
  double min_delta = 1e-5;
  std::uint64_t seed = 0;
};

struct TrialMetrics {
  double rmse_pct_mvf = 0.0;
  double pearson_r = 0.0;
  bool r_degenerate = false;  // constant prediction or target; r reported as 0
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  int best_epoch = -1;             // 0-based
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<TrialMetrics> test_trials;
  double mean_rmse_pct_mvf = 0.0;
  double mean_pearson_r = 0.0;
};

namespace detail {

/// Copies the given windows side by side into one [F x B*T] leaf (and the
/// matching [1 x B*T] target leaf when `tgt` is non-null). The graph's window
/// length is set so recurrent ops and the causal convolutions treat each
/// window independently; outputs match per-window evaluation exactly.
template <class T>
TensorPtr<T> stack_windows(Graph<T>& g, const DecoderDataset& ds,
                           const std::vector<size_t>& windows, TensorPtr<T>* tgt) {
  const Eigen::Index F = ds.inputs[windows[0]].rows();
  const Eigen::Index T_len = ds.inputs[windows[0]].cols();
  const auto B = static_cast<Eigen::Index>(windows.size());
  g.set_window_len(T_len);
  auto x = g.leaf({F, B * T_len});
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> xm(
      x->values.data(), F, B * T_len);
  if (tgt) *tgt = g.leaf({Eigen::Index(1), B * T_len});
  for (Eigen::Index b = 0; b < B; ++b) {
    const size_t w = windows[static_cast<size_t>(b)];
    xm.middleCols(b * T_len, T_len) = ds.inputs[w].template cast<T>();
    if (tgt)
      for (Eigen::Index t = 0; t < T_len; ++t)
        (*tgt)->values[static_cast<size_t>(b * T_len + t)] =
            static_cast<T>(ds.targets_norm[w](t));
  }
  return x;
}

}  // namespace detail

template <class T>
double eval_mse(const Model<T>& model, const DecoderDataset& ds, size_t chunk = 32) {
  if (ds.size() == 0) throw DataError("eval_mse: empty dataset");
  double total = 0.0;
  for (size_t start = 0; start < ds.size(); start += chunk) {
    const size_t end = std::min(ds.size(), start + chunk);
    std::vector<size_t> windows(end - start);
    std::iota(windows.begin(), windows.end(), start);
    Graph<T> g;
    auto x = detail::stack_windows(g, ds, windows, static_cast<TensorPtr<T>*>(nullptr));
    auto y = model.forward(g, x, false, nullptr);
    const Eigen::Index T_len = ds.targets_norm[start].size();
    for (size_t w = start; w < end; ++w) {
      double acc = 0.0;
      for (Eigen::Index t = 0; t < T_len; ++t) {
        const double d = static_cast<double>(
                             y->values[static_cast<size_t>(w - start) *
                                           static_cast<size_t>(T_len) +
                                       static_cast<size_t>(t)]) -
                         ds.targets_norm[w](t);
        acc += d * d;
      }
      total += acc / static_cast<double>(T_len);
    }
  }
  return total / static_cast<double>(ds.size());
}

/// Seeded mini-batch training with validation early stopping; best-validation
/// parameters are restored before returning. Batch shuffling is reseeded per
/// epoch from the master seed.
template <class T>
TrainReport fit(Model<T>& model, const DecoderDataset& train_ds, const DecoderDataset& val_ds,
                const TrainOptions& opts) {
  if (train_ds.size() == 0 || val_ds.size() == 0)
    throw DataError("fit: train and val datasets must be non-empty");

  OptimizerState<T> state;
  state.lr = opts.lr;
  state.init(model.params);

  TrainReport report;
  std::vector<tensor::AlignedVec<T>> best_params;
  int epochs_since_best = 0;

  std::vector<size_t> order(train_ds.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(opts.seed * 6364136223846793005ULL +
                                static_cast<std::uint64_t>(epoch) + 1ULL);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng(opts.seed * 1442695040888963407ULL +
                                static_cast<std::uint64_t>(epoch) + 7ULL);

    double epoch_loss = 0.0;
    size_t n_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
      for (auto& p : model.params) p->zero_grad();
      // One stacked graph per mini-batch: the loss over [1 x B*T] equals the
      // mean of the per-window MSEs, so seeding backward with 1 reproduces
      // the gradient of the per-window average exactly.
      const std::vector<size_t> windows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end));
      Graph<T> g;
      TensorPtr<T> tgt;
      auto x = detail::stack_windows(g, train_ds, windows, &tgt);
      auto pred = model.forward(g, x, true, &dropout_rng);
      auto loss = g.mse(pred, tgt);
      g.backward(loss);
      adam_step(model.params, state);
      epoch_loss += static_cast<double>(loss->values[0]);
      ++n_batches;
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n_batches));

    const double val = eval_mse(model, val_ds);
    if (!std::isfinite(val)) throw NumericalError("fit: validation loss is not finite");
    report.val_loss.push_back(val);

    if (val < report.best_val_loss - opts.min_delta) {
      report.best_val_loss = val;
      report.best_epoch = epoch;
      epochs_since_best = 0;
      best_params.clear();
      for (const auto& p : model.params) best_params.push_back(p->values);
    } else {
      ++epochs_since_best;
      if (epochs_since_best > opts.patience) break;
    }
  }

  if (!best_params.empty())
    for (size_t p = 0; p < model.params.size(); ++p) model.params[p]->values = best_params[p];
  return report;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Per-trial RMSE (%MVF) and Pearson r over concatenated window predictions,
/// plus means across trials.
template <class T>
std::vector<TrialMetrics> evaluate(const Model<T>& model,
                                   const std::vector<DecoderDataset>& test_trials,
                                   const dsp::NormStats& target_stats, double* mean_rmse = nullptr,
                                   double* mean_r = nullptr) {
  if (test_trials.empty()) throw DataError("evaluate: need at least one test trial");
  std::vector<TrialMetrics> out;
  double rmse_acc = 0.0, r_acc = 0.0;
  for (const DecoderDataset& trial : test_trials) {
    if (trial.size() == 0) throw DataError("evaluate: empty test trial");
    const Eigen::Index T_len = trial.targets_raw[0].size();
    Eigen::VectorXd pred(static_cast<Eigen::Index>(trial.size()) * T_len);
    Eigen::VectorXd meas(pred.size());
    for (size_t w = 0; w < trial.size(); ++w) {
      const Eigen::VectorXd y =
          models::predict_window(model, trial.inputs[w], &target_stats);
      pred.segment(static_cast<Eigen::Index>(w) * T_len, T_len) = y;
      meas.segment(static_cast<Eigen::Index>(w) * T_len, T_len) = trial.targets_raw[w];
    }
    TrialMetrics m;
    m.rmse_pct_mvf = stats::rmse(pred, meas);
    m.pearson_r = stats::pearson(pred, meas, &m.r_degenerate);
    rmse_acc += m.rmse_pct_mvf;
    r_acc += m.pearson_r;
    out.push_back(m);
  }
  if (mean_rmse) *mean_rmse = rmse_acc / static_cast<double>(out.size());
  if (mean_r) *mean_r = r_acc / static_cast<double>(out.size());
  return out;
}

}  // namespace mudec::train
