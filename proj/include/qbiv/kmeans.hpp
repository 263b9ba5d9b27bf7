#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "qbiv/core.hpp"

namespace qbiv {

/// Index of the nearest row of `centroids` to `v`; ties go to the lowest index.
inline std::size_t nearest_row(const Matrix& centroids, std::span<const double> v) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(centroids.row(c), v);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

/// K-means++ seeding. Returns `k` row indices into `points`. If every
/// remaining point coincides with a chosen center, picks uniformly.
inline std::vector<std::size_t> kmeanspp_seed(const Matrix& points, std::size_t k, CounterRng& rng) {
  const std::size_t n = points.rows();
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  chosen.push_back(static_cast<std::size_t>(rng.below(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), points.row(chosen[0]));

  while (chosen.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      // Guard against landing on a zero-weight tail through rounding.
      while (d2[pick] == 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    chosen.push_back(pick);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = squared_distance(points.row(i), points.row(pick));
      if (d < d2[i]) d2[i] = d;
    }
  }
  return chosen;
}

/// Lloyd iterations from K-means++ seeds. Empty clusters keep their previous
/// centroid. Stops early once assignments are stable.
inline Matrix kmeans(const Matrix& points, std::size_t k, CounterRng& rng, std::size_t max_iters) {
  if (points.rows() == 0 || k == 0) throw Error(Errc::insufficient_data, "k-means needs points and k >= 1");
  const std::size_t dim = points.cols();
  Matrix centroids(k, dim);
  const auto seeds = kmeanspp_seed(points, k, rng);
  for (std::size_t c = 0; c < k; ++c) {
    auto src = points.row(seeds[c]);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
  }

  std::vector<std::size_t> assign(points.rows(), k);
  std::vector<std::size_t> counts(k);
  Matrix sums(k, dim);
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      const std::size_t c = nearest_row(centroids, points.row(i));
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    std::fill(counts.begin(), counts.end(), 0);
    std::fill(sums.data().begin(), sums.data().end(), 0.0);
    for (std::size_t i = 0; i < points.rows(); ++i) {
      ++counts[assign[i]];
      auto s = sums.row(assign[i]);
      auto p = points.row(i);
      for (std::size_t j = 0; j < dim; ++j) s[j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto s = sums.row(c);
      auto out = centroids.row(c);
      for (std::size_t j = 0; j < dim; ++j) out[j] = s[j] / static_cast<double>(counts[c]);
    }
  }
  return centroids;
}

}  // namespace qbiv
