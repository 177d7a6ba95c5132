#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace mudec::stats {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid) - 1, v.end());
  return 0.5 * (hi + v[mid - 1]);
}

/// Median absolute deviation around the median (unnormalized).
inline double mad(const std::vector<double>& v) {
  const double med = median(v);
  std::vector<double> dev(v.size());
  for (size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
  return median(std::move(dev));
}

/// Sample Pearson correlation. When either input is (numerically) constant the
/// correlation is undefined; 0 is returned and *degenerate set when provided.
inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                      bool* degenerate = nullptr) {
  if (degenerate) *degenerate = false;
  if (a.size() != b.size() || a.size() < 2) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double na = std::sqrt(da.square().sum());
  const double nb = std::sqrt(db.square().sum());
  if (na <= 1e-300 || nb <= 1e-300) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return std::clamp((da * db).sum() / (na * nb), -1.0, 1.0);
}

inline double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  return std::sqrt((pred - target).array().square().mean());
}

}  // namespace mudec::stats
