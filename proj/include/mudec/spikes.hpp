#pragma once

#include "mudec/signal.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mudec {

/// Per-unit quality of a spike/noise clustering.
struct UnitQuality {
  double silhouette = -1.0;  // in [-1, 1]
  double force_corr = 0.0;   // |Pearson r| of smoothed drive vs force
  bool converged = true;     // FastICA fixed point reached
};

/// Discrete firing events of one motor unit, as sample indices at the EMG
/// rate. Indices are strictly increasing.
struct SpikeTrain {
  std::vector<std::int64_t> indices;
  UnitQuality quality;

  /// Binary-train view s[n] in {0,1} over n_samples.
  std::vector<std::uint8_t> binary(std::int64_t n_samples) const {
    std::vector<std::uint8_t> s(static_cast<size_t>(n_samples), 0);
    for (std::int64_t i : indices)
      if (i >= 0 && i < n_samples) s[static_cast<size_t>(i)] = 1;
    return s;
  }
};

/// A set of per-unit spike trains sharing one sample rate and length.
struct SpikeTrainSet {
  std::vector<SpikeTrain> units;
  double sample_rate_hz = 0.0;
  std::int64_t n_samples = 0;
  std::vector<std::string> unit_labels;

  size_t size() const { return units.size(); }

  void check() const {
    for (const SpikeTrain& u : units)
      for (size_t k = 1; k < u.indices.size(); ++k)
        if (u.indices[k] <= u.indices[k - 1])
          throw DataError("SpikeTrainSet: indices not strictly increasing");
  }
};

/// Rate of agreement between two trains: matched / (matched + only_a + only_b),
/// with greedy one-to-one matching within +-tol samples after removing a
/// constant best lag (estimated over lag_search samples).
inline double rate_of_agreement(const SpikeTrain& est, const SpikeTrain& truth,
                                std::int64_t tol_samples, std::int64_t lag_search = 0) {
  if (est.indices.empty() && truth.indices.empty()) return 1.0;
  if (est.indices.empty() || truth.indices.empty()) return 0.0;

  auto count_matches = [&](std::int64_t lag) {
    size_t i = 0, j = 0, matches = 0;
    while (i < est.indices.size() && j < truth.indices.size()) {
      const std::int64_t d = (est.indices[i] - lag) - truth.indices[j];
      if (std::llabs(d) <= tol_samples) {
        ++matches;
        ++i;
        ++j;
      } else if (d < 0) {
        ++i;
      } else {
        ++j;
      }
    }
    return matches;
  };

  size_t best = 0;
  for (std::int64_t lag = -lag_search; lag <= lag_search; ++lag)
    best = std::max(best, count_matches(lag));
  const size_t denom = est.indices.size() + truth.indices.size() - best;
  return denom == 0 ? 1.0 : static_cast<double>(best) / static_cast<double>(denom);
}

}  // namespace mudec
