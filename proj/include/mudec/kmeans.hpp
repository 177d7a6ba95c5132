#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mudec::kmeans {

struct Clustering1D {
  std::vector<int> labels;      // 0..k-1 per point
  std::vector<double> centers;  // ascending by construction is NOT guaranteed
  double inertia = 0.0;         // within-cluster sum of squared distances
};

/// k-means++ seeding on scalar data: first center uniform, subsequent centers
/// drawn with probability proportional to squared distance to the nearest
/// chosen center.
inline std::vector<double> plusplus_init(const std::vector<double>& x, int k,
                                         std::mt19937_64& rng) {
  std::vector<double> centers;
  std::uniform_int_distribution<size_t> first(0, x.size() - 1);
  centers.push_back(x[first(rng)]);
  std::vector<double> d2(x.size());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(x[first(rng)]);
      continue;
    }
    std::uniform_real_distribution<double> uni(0.0, total);
    double r = uni(rng);
    size_t pick = x.size() - 1;
    for (size_t i = 0; i < x.size(); ++i) {
      r -= d2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(x[pick]);
  }
  return centers;
}

/// Lloyd iterations from a k-means++ start.
inline Clustering1D lloyd_1d(const std::vector<double>& x, int k, std::mt19937_64& rng,
                             int max_iter = 100) {
  Clustering1D out;
  out.centers = plusplus_init(x, k, rng);
  out.labels.assign(x.size(), 0);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (size_t i = 0; i < x.size(); ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        const double d = std::abs(x[i] - out.centers[static_cast<size_t>(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (out.labels[i] != best) {
        out.labels[i] = best;
        changed = true;
      }
    }
    std::vector<double> sum(static_cast<size_t>(k), 0.0);
    std::vector<std::int64_t> cnt(static_cast<size_t>(k), 0);
    for (size_t i = 0; i < x.size(); ++i) {
      sum[static_cast<size_t>(out.labels[i])] += x[i];
      ++cnt[static_cast<size_t>(out.labels[i])];
    }
    for (int c = 0; c < k; ++c)
      if (cnt[static_cast<size_t>(c)] > 0)
        out.centers[static_cast<size_t>(c)] =
            sum[static_cast<size_t>(c)] / static_cast<double>(cnt[static_cast<size_t>(c)]);
    if (!changed && it > 0) break;
  }
  out.inertia = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - out.centers[static_cast<size_t>(out.labels[i])];
    out.inertia += d * d;
  }
  return out;
}

/// Best-of-n_restarts seeded k-means++ clustering of scalar data.
inline Clustering1D cluster_1d(const std::vector<double>& x, int k, std::uint64_t seed,
                               int n_restarts = 5) {
  Clustering1D best;
  best.inertia = std::numeric_limits<double>::max();
  for (int r = 0; r < n_restarts; ++r) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(r) * 7919ULL);
    Clustering1D c = lloyd_1d(x, k, rng);
    if (c.inertia < best.inertia) best = std::move(c);
  }
  return best;
}

/// Mean silhouette score of a labeled scalar clustering, exact, via sorted
/// prefix sums (O(n log n)). Singleton-cluster points score 0.
inline double silhouette_1d(const std::vector<double>& x, const std::vector<int>& labels,
                            int k) {
  struct Sorted {
    std::vector<double> v;
    std::vector<double> prefix;  // prefix[i] = sum of v[0..i-1]
  };
  std::vector<Sorted> clusters(static_cast<size_t>(k));
  for (size_t i = 0; i < x.size(); ++i)
    clusters[static_cast<size_t>(labels[i])].v.push_back(x[i]);
  for (auto& c : clusters) {
    std::sort(c.v.begin(), c.v.end());
    c.prefix.resize(c.v.size() + 1, 0.0);
    for (size_t i = 0; i < c.v.size(); ++i) c.prefix[i + 1] = c.prefix[i] + c.v[i];
  }
  // Sum of |xi - y| over all y in cluster c.
  auto abs_dist_sum = [](const Sorted& c, double xi) {
    const auto it = std::lower_bound(c.v.begin(), c.v.end(), xi);
    const auto r = static_cast<size_t>(it - c.v.begin());
    const double below = xi * static_cast<double>(r) - c.prefix[r];
    const double above =
        (c.prefix[c.v.size()] - c.prefix[r]) - xi * static_cast<double>(c.v.size() - r);
    return below + above;
  };

  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const auto own = static_cast<size_t>(labels[i]);
    const size_t m = clusters[own].v.size();
    if (m <= 1) continue;  // silhouette 0 for singletons
    const double a = abs_dist_sum(clusters[own], x[i]) / static_cast<double>(m - 1);
    double b = std::numeric_limits<double>::max();
    for (size_t c = 0; c < clusters.size(); ++c) {
      if (c == own || clusters[c].v.empty()) continue;
      b = std::min(b, abs_dist_sum(clusters[c], x[i]) /
                          static_cast<double>(clusters[c].v.size()));
    }
    if (b == std::numeric_limits<double>::max()) continue;  // single non-empty cluster
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return x.empty() ? 0.0 : total / static_cast<double>(x.size());
}

}  // namespace mudec::kmeans
