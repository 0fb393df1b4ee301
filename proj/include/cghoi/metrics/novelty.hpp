#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "cghoi/diffkit/tensor.hpp"
#include "cghoi/repr/frame.hpp"

namespace cghoi::metrics {

struct Neighbor {
  std::size_t index = 0;  // into the train set
  double distance = 0.0;
};

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

struct NoveltyReport {
  std::vector<std::vector<Neighbor>> neighbors;  // per generated sample, ascending
  Histogram nearest;                             // nearest-neighbor distances of the generated set
  std::vector<double> train_nearest;             // per train sequence, nearest other train sequence
  std::optional<double> train_baseline;          // mean of train_nearest; none with one train sequence

  double mean_nearest() const {
    double s = 0.0;
    for (const auto& n : neighbors) s += n.front().distance;
    return neighbors.empty() ? 0.0 : s / static_cast<double>(neighbors.size());
  }
};

// L2 over body parameters and object transforms of every frame; contact
// channels are left out.
inline double motion_distance(const diffkit::Tensor& a, const diffkit::Tensor& b) {
  if (a.shape() != b.shape()) throw ValidationError("novelty: frame counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t c = i % repr::kFrameWidth;
    if (c >= repr::kContactOffset && c < repr::kObjectOffset) continue;
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline Histogram make_histogram(const std::vector<double>& v, std::size_t bins) {
  Histogram h;
  h.counts.assign(bins, 0);
  if (v.empty()) return h;
  h.lo = *std::min_element(v.begin(), v.end());
  h.hi = *std::max_element(v.begin(), v.end());
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double x : v) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((x - h.lo) / width) : 0;
    h.counts[std::min(b, bins - 1)] += 1;
  }
  return h;
}

inline NoveltyReport novelty_analysis(const std::vector<const diffkit::Tensor*>& train,
                                      const std::vector<const diffkit::Tensor*>& generated, std::size_t k = 3,
                                      std::size_t bins = 10) {
  if (train.empty() || generated.empty()) throw ValidationError("novelty: both sets must be nonempty");
  if (k == 0 || bins == 0) throw ValidationError("novelty: k and bins must be positive");
  const auto& shape = train.front()->shape();
  if (shape.size() != 2 || shape[1] != repr::kFrameWidth) throw ShapeError("novelty: frames must be [F,216]");
  for (const auto* s : train)
    if (s->shape() != shape) throw ValidationError("novelty: frame counts differ");
  for (const auto* s : generated)
    if (s->shape() != shape) throw ValidationError("novelty: frame counts differ");

  NoveltyReport r;
  std::vector<double> nearest;
  const std::size_t kk = std::min(k, train.size());
  for (const auto* g : generated) {
    std::vector<Neighbor> all;
    for (std::size_t j = 0; j < train.size(); ++j) all.push_back({j, motion_distance(*g, *train[j])});
    std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
    all.resize(kk);
    nearest.push_back(all.front().distance);
    r.neighbors.push_back(std::move(all));
  }
  r.nearest = make_histogram(nearest, bins);

  if (train.size() > 1) {
    // symmetric distances, computed once per pair
    const std::size_t n = train.size();
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = motion_distance(*train[i], *train[j]);
        best[i] = std::min(best[i], d);
        best[j] = std::min(best[j], d);
      }
    }
    r.train_nearest = best;
    double s = 0.0;
    for (double d : best) s += d;
    r.train_baseline = s / static_cast<double>(n);
  }
  return r;
}

}  // namespace cghoi::metrics
