// Training loop tests. Adam is pinned by a hand-computed first step, the
// split and standardization logic by independent recomputation, and fit() by
// determinism and descent checks on a tiny learnable task.

#include "mudec/train.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace mudec;
using Catch::Approx;

namespace {

using D = double;

train::DecoderDataset linear_task(int n_windows, Eigen::Index t_len, unsigned seed) {
  // Target is a fixed linear readout of two input channels; learnable by a
  // one-block TCN to near-zero loss.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  train::DecoderDataset ds;
  for (int w = 0; w < n_windows; ++w) {
    Eigen::MatrixXd x(2, t_len);
    for (Eigen::Index c = 0; c < 2; ++c)
      for (Eigen::Index t = 0; t < t_len; ++t) x(c, t) = g(rng);
    Eigen::VectorXd y = 0.7 * x.row(0).transpose() - 0.3 * x.row(1).transpose();
    ds.inputs.push_back(x);
    ds.targets_norm.push_back(y);
    ds.targets_raw.push_back((y.array() * 5.0 + 20.0).matrix());
  }
  return ds;
}

models::TcnConfig tiny_tcn() {
  models::TcnConfig cfg;
  cfg.in_features = 2;
  cfg.width = 6;
  cfg.kernel = 3;
  cfg.dilations = {1};
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("adam optimizer") {
  auto param_with_grad = [](double value, double grad) {
    auto p = tensor::make_tensor<D>({1}, true);
    p->values[0] = value;
    p->ensure_grad();
    p->grad[0] = grad;
    return p;
  };

  SECTION("first step with unit gradient moves by approximately lr") {
    // m1 = 0.1, v1 = 0.001; bias correction makes mhat = vhat = 1, so the
    // update is lr / (1 + eps).
    std::vector<tensor::TensorPtr<D>> params{param_with_grad(1.0, 1.0)};
    train::OptimizerState<D> st;
    st.init(params);
    train::adam_step(params, st);
    REQUIRE(params[0]->values[0] == Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
    REQUIRE(st.step == 1);

    // Constant gradient: bias-corrected moments stay at 1, second step is
    // another full lr.
    params[0]->grad[0] = 1.0;
    train::adam_step(params, st);
    REQUIRE(params[0]->values[0] == Approx(1.0 - 2.0 * 1e-3 / (1.0 + 1e-8)).epsilon(1e-9));
  }
  SECTION("zero gradient leaves the parameter unchanged") {
    std::vector<tensor::TensorPtr<D>> params{param_with_grad(3.5, 0.0)};
    train::OptimizerState<D> st;
    st.init(params);
    train::adam_step(params, st);
    REQUIRE(params[0]->values[0] == 3.5);
  }
  SECTION("non-finite gradient throws NumericalError") {
    std::vector<tensor::TensorPtr<D>> params{
        param_with_grad(1.0, std::numeric_limits<double>::quiet_NaN())};
    train::OptimizerState<D> st;
    st.init(params);
    REQUIRE_THROWS_AS(train::adam_step(params, st), NumericalError);
    params[0]->grad[0] = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(train::adam_step(params, st), NumericalError);
  }
  SECTION("state re-initializes when the parameter set changes") {
    std::vector<tensor::TensorPtr<D>> params{param_with_grad(1.0, 1.0)};
    train::OptimizerState<D> st;  // never initialized
    train::adam_step(params, st);
    REQUIRE(st.m.size() == 1);
  }
}

TEST_CASE("trial splitting") {
  SECTION("6/2/2 of 10 is a disjoint cover") {
    auto s = train::split_trials(10, 6, 2, 2, 42);
    REQUIRE(s.train.size() == 6);
    REQUIRE(s.val.size() == 2);
    REQUIRE(s.test.size() == 2);
    std::set<int> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    REQUIRE(all.size() == 10);
    REQUIRE(*all.begin() == 0);
    REQUIRE(*all.rbegin() == 9);
  }
  SECTION("deterministic by seed") {
    auto a = train::split_trials(10, 6, 2, 2, 42);
    auto b = train::split_trials(10, 6, 2, 2, 42);
    auto c = train::split_trials(10, 6, 2, 2, 43);
    REQUIRE(a.train == b.train);
    REQUIRE(a.val == b.val);
    REQUIRE(a.test == b.test);
    REQUIRE((a.train != c.train || a.val != c.val || a.test != c.test));
  }
  SECTION("partial split leaves trials unused") {
    auto s = train::split_trials(10, 4, 1, 1, 1);
    REQUIRE(s.train.size() + s.val.size() + s.test.size() == 6);
  }
  SECTION("insufficient trials throw DataError") {
    REQUIRE_THROWS_AS(train::split_trials(5, 6, 2, 2, 1), DataError);
  }
}

TEST_CASE("window standardization") {
  dsp::WindowedDataset wd;
  wd.window_len = 4;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(2.0, 3.0);
  for (int w = 0; w < 5; ++w) {
    Eigen::MatrixXd x(2, 4);
    Eigen::VectorXd y(4);
    for (Eigen::Index c = 0; c < 2; ++c)
      for (Eigen::Index t = 0; t < 4; ++t) x(c, t) = g(rng);
    for (Eigen::Index t = 0; t < 4; ++t) y(t) = g(rng) * 10.0;
    wd.inputs.push_back(x);
    wd.targets.push_back(y);
  }

  dsp::NormStats in_stats, tgt_stats;
  train::fit_window_stats(wd, in_stats, tgt_stats);

  SECTION("stats match a direct population estimate over flattened windows") {
    for (Eigen::Index f = 0; f < 2; ++f) {
      std::vector<double> vals;
      for (const auto& x : wd.inputs)
        for (Eigen::Index t = 0; t < 4; ++t) vals.push_back(x(f, t));
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= static_cast<double>(vals.size());
      REQUIRE(in_stats.mean(f) == Approx(mean).epsilon(1e-12));
      REQUIRE(in_stats.std(f) == Approx(std::sqrt(var)).epsilon(1e-12));
    }
  }
  SECTION("standardized windows have zero mean and unit std") {
    auto ds = train::standardize_windows(wd, in_stats, tgt_stats);
    REQUIRE(ds.size() == wd.size());
    for (Eigen::Index f = 0; f < 2; ++f) {
      double mean = 0.0, var = 0.0;
      for (const auto& x : ds.inputs) mean += x.row(f).sum();
      mean /= 20.0;
      for (const auto& x : ds.inputs) var += (x.row(f).array() - mean).square().sum();
      var /= 20.0;
      REQUIRE(mean == Approx(0.0).margin(1e-12));
      REQUIRE(var == Approx(1.0).epsilon(1e-9));
    }
  }
  SECTION("raw targets survive and normalized ones invert exactly") {
    auto ds = train::standardize_windows(wd, in_stats, tgt_stats);
    for (size_t w = 0; w < ds.size(); ++w) {
      REQUIRE(ds.targets_raw[w] == wd.targets[w]);
      Eigen::VectorXd back = ds.targets_norm[w] * tgt_stats.std(0);
      back.array() += tgt_stats.mean(0);
      for (Eigen::Index t = 0; t < 4; ++t)
        REQUIRE(back(t) == Approx(wd.targets[w](t)).epsilon(1e-10));
    }
  }
  SECTION("empty training split throws DataError") {
    dsp::WindowedDataset empty;
    dsp::NormStats a, b;
    REQUIRE_THROWS_AS(train::fit_window_stats(empty, a, b), DataError);
  }
}

TEST_CASE("fit on a learnable linear task") {
  auto train_ds = linear_task(24, 32, 1);
  auto val_ds = linear_task(6, 32, 2);

  train::TrainOptions opts;
  opts.lr = 5e-3;
  opts.batch_size = 8;
  opts.max_epochs = 30;
  opts.patience = 30;
  opts.seed = 11;

  SECTION("loss descends and early-stopping bookkeeping holds") {
    auto model = models::build_tcn<D>(tiny_tcn(), 5);
    const double val0 = train::eval_mse(model, val_ds);
    auto report = train::fit(model, train_ds, val_ds, opts);
    REQUIRE(!report.train_loss.empty());
    REQUIRE(report.val_loss.size() == report.train_loss.size());
    REQUIRE(report.best_epoch >= 0);
    REQUIRE(report.best_val_loss ==
            *std::min_element(report.val_loss.begin(), report.val_loss.end()));
    REQUIRE(report.best_val_loss < 0.5 * val0);
    REQUIRE(report.train_loss.back() < report.train_loss.front());
    // Restored parameters reproduce the best validation loss.
    REQUIRE(train::eval_mse(model, val_ds) == Approx(report.best_val_loss).epsilon(1e-9));
  }
  SECTION("deterministic for a fixed seed") {
    auto m1 = models::build_tcn<D>(tiny_tcn(), 5);
    auto m2 = models::build_tcn<D>(tiny_tcn(), 5);
    auto r1 = train::fit(m1, train_ds, val_ds, opts);
    auto r2 = train::fit(m2, train_ds, val_ds, opts);
    REQUIRE(r1.train_loss == r2.train_loss);
    REQUIRE(r1.val_loss == r2.val_loss);
    for (size_t p = 0; p < m1.params.size(); ++p)
      REQUIRE(m1.params[p]->values == m2.params[p]->values);
  }
  SECTION("empty datasets throw DataError") {
    auto model = models::build_tcn<D>(tiny_tcn(), 5);
    train::DecoderDataset empty;
    REQUIRE_THROWS_AS(train::fit(model, empty, val_ds, opts), DataError);
    REQUIRE_THROWS_AS(train::fit(model, train_ds, empty, opts), DataError);
    REQUIRE_THROWS_AS(train::eval_mse(model, empty), DataError);
  }
}

TEST_CASE("evaluate metrics") {
  // Hand-built identity decoder: prediction equals the single input channel,
  // so the metrics have closed-form oracles.
  models::Model<D> id;
  id.arch = "identity";
  id.in_features = 1;
  id.forward = [](tensor::Graph<D>& g, const tensor::TensorPtr<D>& x, bool,
                  std::mt19937_64*) { return g.mul_scalar(x, 1.0); };

  dsp::NormStats stats;
  stats.mean = Eigen::VectorXd::Constant(1, 10.0);
  stats.std = Eigen::VectorXd::Constant(1, 2.0);

  const Eigen::Index T = 16;
  train::DecoderDataset trial;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int w = 0; w < 3; ++w) {
    Eigen::MatrixXd x(1, T);
    Eigen::VectorXd raw(T);
    for (Eigen::Index t = 0; t < T; ++t) {
      x(0, t) = g(rng);
      raw(t) = x(0, t) * 2.0 + 10.0 + 0.5 * g(rng);  // noisy rescaled copy
    }
    trial.inputs.push_back(x);
    trial.targets_norm.push_back((raw.array() - 10.0) / 2.0);
    trial.targets_raw.push_back(raw);
  }

  SECTION("per-trial RMSE and r match direct computation") {
    double mean_rmse = 0.0, mean_r = 0.0;
    auto metrics = train::evaluate(id, {trial}, stats, &mean_rmse, &mean_r);
    REQUIRE(metrics.size() == 1);

    Eigen::VectorXd pred(3 * T), meas(3 * T);
    for (int w = 0; w < 3; ++w) {
      pred.segment(w * T, T) = trial.inputs[w].row(0).transpose() * 2.0;
      pred.segment(w * T, T).array() += 10.0;
      meas.segment(w * T, T) = trial.targets_raw[w];
    }
    REQUIRE(metrics[0].rmse_pct_mvf == Approx(stats::rmse(pred, meas)).epsilon(1e-12));
    REQUIRE(metrics[0].pearson_r == Approx(stats::pearson(pred, meas)).epsilon(1e-12));
    REQUIRE(!metrics[0].r_degenerate);
    REQUIRE(mean_rmse == Approx(metrics[0].rmse_pct_mvf));
    REQUIRE(mean_r == Approx(metrics[0].pearson_r));
  }
  SECTION("constant prediction flags r as degenerate") {
    models::Model<D> zero = id;
    zero.forward = [](tensor::Graph<D>& g, const tensor::TensorPtr<D>& x, bool,
                      std::mt19937_64*) { return g.mul_scalar(x, 0.0); };
    auto metrics = train::evaluate(zero, {trial}, stats);
    REQUIRE(metrics[0].r_degenerate);
    REQUIRE(metrics[0].pearson_r == 0.0);
  }
  SECTION("empty inputs throw DataError") {
    REQUIRE_THROWS_AS(train::evaluate(id, {}, stats), DataError);
    train::DecoderDataset empty;
    REQUIRE_THROWS_AS(train::evaluate(id, {empty}, stats), DataError);
  }
}
