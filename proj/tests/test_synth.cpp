// Synthetic session generator tests. The mixing oracle rebuilds EMG and force
// by hand from the returned truth spikes, so template placement and twitch
// convolution are verified independently of the generator internals.

#include "mudec/synthgen.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace mudec;
using Catch::Approx;

namespace {

// Tiny hand-specified pool: 2 units, 3 channels, 4 s trials.
synth::MotorUnitPool small_pool() {
  synth::MotorUnitPool p;
  p.n_units = 2;
  p.recruitment_thresholds = {0.05, 0.25};
  p.twitch_amplitudes = {1.0, 2.0};
  p.twitch_time_constants_ms = {80.0, 50.0};
  return p;
}

synth::MixingModel small_mix(double noise_std = 0.0) {
  synth::MixingModel m;
  Eigen::MatrixXd t0(3, 4), t1(3, 4);
  t0 << 1, -1, 0.5, 0, 0.5, -0.5, 0.25, 0, 0, 0, 0, 0;
  t1 << 0, 0, 0, 0, 0.3, -0.3, 0, 0, 1, -0.8, 0.2, 0;
  m.muap_templates = {t0, t1};
  m.noise_std = noise_std;
  m.channel_groups = {{"flexor", {0, 1}}, {"extensor", {2}}};
  return m;
}

synth::TrialSpec small_spec(std::uint64_t seed, double level = 0.5) {
  synth::TrialSpec s;
  s.duration_s = 6.0;
  s.target_profile = {1.0, 4.0, level};
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("trapezoid drive") {
  const synth::TrialSpec s = small_spec(1);
  REQUIRE(s.drive_at(0.0) == Approx(0.0));
  REQUIRE(s.drive_at(0.5) == Approx(0.25));
  REQUIRE(s.drive_at(1.0) == Approx(0.5));
  REQUIRE(s.drive_at(2.0) == Approx(0.5));
  REQUIRE(s.drive_at(5.5) == Approx(0.25));
  REQUIRE(s.drive_at(6.0) == Approx(0.0).margin(1e-12));
}

TEST_CASE("trial generation is deterministic") {
  const auto pool = small_pool();
  const auto mix = small_mix(0.02);
  const synth::Trial a = synth::generate_trial(pool, mix, small_spec(77));
  const synth::Trial b = synth::generate_trial(pool, mix, small_spec(77));
  REQUIRE(a.emg.data == b.emg.data);
  REQUIRE(a.force.data == b.force.data);
  REQUIRE(a.truth_spikes.units.size() == b.truth_spikes.units.size());
  for (size_t u = 0; u < a.truth_spikes.units.size(); ++u)
    REQUIRE(a.truth_spikes.units[u].indices == b.truth_spikes.units[u].indices);

  const synth::Trial c = synth::generate_trial(pool, mix, small_spec(78));
  REQUIRE(a.emg.data != c.emg.data);
}

TEST_CASE("noise-free EMG equals templates placed at truth spikes") {
  const auto pool = small_pool();
  const auto mix = small_mix(0.0);
  const synth::Trial tr = synth::generate_trial(pool, mix, small_spec(5));
  const auto n = tr.emg.samples();
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(3, n);
  for (size_t u = 0; u < 2; ++u) {
    const Eigen::MatrixXd& tmpl = mix.muap_templates[u];
    for (std::int64_t s : tr.truth_spikes.units[u].indices) {
      REQUIRE(s >= 0);
      REQUIRE(s < n);
      const auto m = std::min<std::int64_t>(tmpl.cols(), n - s);
      expect.middleCols(s, m) += tmpl.leftCols(m);
    }
  }
  REQUIRE((tr.emg.data - expect).cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-12));
}

TEST_CASE("force is twitch superposition normalized to the plateau level") {
  const auto pool = small_pool();
  const synth::TrialSpec spec = small_spec(6, 0.6);
  const synth::Trial tr = synth::generate_trial(pool, small_mix(), spec);
  const auto n = tr.force.samples();

  // Oracle: alpha-function twitches at the truth spikes, then the same
  // plateau normalization.
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(n);
  for (size_t u = 0; u < 2; ++u) {
    const double tau = pool.twitch_time_constants_ms[u] / 1000.0;
    const double amp = pool.twitch_amplitudes[u];
    const auto klen = static_cast<std::int64_t>(std::llround(6.0 * tau * synth::kEmgRateHz));
    for (std::int64_t s : tr.truth_spikes.units[u].indices)
      for (std::int64_t k = s; k < std::min(n, s + klen); ++k) {
        const double tt = static_cast<double>(k - s) / synth::kEmgRateHz / tau;
        expect(k) += amp * tt * std::exp(1.0 - tt);
      }
  }
  const auto q0 = static_cast<std::int64_t>((spec.target_profile.ramp_s + 1.0) * synth::kEmgRateHz);
  const auto q1 = static_cast<std::int64_t>(
      (spec.target_profile.ramp_s + spec.target_profile.plateau_s - 1.0) * synth::kEmgRateHz);
  expect *= 60.0 / expect.segment(q0, q1 - q0).mean();
  REQUIRE((tr.force.data.row(0).transpose() - expect).cwiseAbs().maxCoeff() <
          1e-9 * expect.maxCoeff());
  REQUIRE(tr.force.data.row(0).segment(q0, q1 - q0).mean() == Approx(60.0).margin(1e-6));
}

TEST_CASE("spike counts are monotone in drive level") {
  const auto pool = small_pool();
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    for (int u = 0; u < 2; ++u) {
      const auto lo = synth::generate_unit_spikes(pool, u, small_spec(seed, 0.4));
      const auto hi = synth::generate_unit_spikes(pool, u, small_spec(seed, 0.7));
      REQUIRE(hi.size() >= lo.size());
    }
  }
}

TEST_CASE("plateau firing rate tracks the linear recruitment model") {
  synth::MotorUnitPool pool = small_pool();
  pool.isi_cv = 0.0;  // deterministic ISIs for a sharp rate check
  synth::TrialSpec spec;
  spec.duration_s = 30.0;
  spec.target_profile = {5.0, 15.0, 0.5};
  spec.seed = 3;
  const auto spikes = synth::generate_unit_spikes(pool, 0, spec);
  // Count spikes well inside the plateau.
  int count = 0;
  for (auto s : spikes) {
    const double t = static_cast<double>(s) / synth::kEmgRateHz;
    if (t >= 6.0 && t < 19.0) ++count;
  }
  const double expected_rate =
      pool.min_rate_hz + (pool.peak_rate_hz - pool.min_rate_hz) * (0.5 - 0.05) / 0.95;
  REQUIRE(count / 13.0 == Approx(expected_rate).epsilon(0.05));
}

TEST_CASE("default scenarios") {
  const synth::Scenario easy = synth::default_scenario("easy", 1234);
  REQUIRE(easy.pool.n_units == 8);
  REQUIRE(easy.mix.channels() == 64);
  REQUIRE(easy.snr_db == 20.0);
  REQUIRE(easy.trials.size() == 10);
  std::set<std::uint64_t> seeds;
  for (const auto& t : easy.trials) seeds.insert(t.seed);
  REQUIRE(seeds.size() == 10);
  REQUIRE(easy.mix.channel_groups.count("flexor") == 1);
  REQUIRE(easy.mix.channel_groups.count("extensor") == 1);
  REQUIRE(easy.mix.channel_groups.at("flexor").size() +
              easy.mix.channel_groups.at("extensor").size() ==
          64);

  const synth::Scenario med = synth::default_scenario("medium", 1234);
  REQUIRE(med.pool.n_units == 20);
  REQUIRE(med.mix.channels() == 192);
  REQUIRE(med.snr_db == 10.0);

  const synth::Scenario hard = synth::default_scenario("hard", 1234);
  REQUIRE(hard.snr_db == 5.0);
  const synth::Scenario hard2 = synth::default_scenario("hard", 1234);
  for (size_t t = 0; t < hard.trials.size(); ++t)
    REQUIRE(hard.trials[t].seed == hard2.trials[t].seed);

  REQUIRE_THROWS_AS(synth::default_scenario("nope", 1), ParameterError);
}

TEST_CASE("scenario SNR calibration") {
  // Rebuild the easy scenario noise-free and compare plateau RMS against the
  // injected noise floor.
  const synth::Scenario sc = synth::default_scenario("easy", 1234);
  synth::MixingModel clean = sc.mix;
  clean.noise_std = 0.0;
  const synth::Trial tr = synth::generate_trial(sc.pool, clean, sc.trials[0]);
  const auto p0 = static_cast<std::int64_t>(6.0 * synth::kEmgRateHz);
  const auto p1 = static_cast<std::int64_t>(19.0 * synth::kEmgRateHz);
  const double sig_rms = std::sqrt(
      tr.emg.data.middleCols(p0, p1 - p0).array().square().mean());
  const double snr_db = 20.0 * std::log10(sig_rms / sc.mix.noise_std);
  REQUIRE(snr_db == Approx(20.0).margin(0.5));
}

TEST_CASE("pool validation") {
  synth::MotorUnitPool p = small_pool();
  p.recruitment_thresholds = {0.25, 0.05};  // not increasing
  REQUIRE_THROWS_AS(p.validate(), ParameterError);
}
