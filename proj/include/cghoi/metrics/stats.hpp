#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "cghoi/diffkit/tensor.hpp"
#include "cghoi/error.hpp"
#include "cghoi/rng.hpp"

namespace cghoi::metrics {

using diffkit::Tensor;

namespace detail {

inline double row_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.cols();
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double x = static_cast<double>(a[i * d + k]) - b[j * d + k];
    s += x * x;
  }
  return std::sqrt(s);
}

inline void require_features(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.rows() == 0 || t.cols() == 0) throw ShapeError(std::string(what) + ": expected [N,d] features");
  if (!t.all_finite()) throw ValidationError(std::string(what) + ": features are not finite");
}

// First m entries of a seeded Fisher-Yates shuffle of 0..n-1.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(m);
  return idx;
}

inline Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t[i * t.cols() + j];
  return m;
}

}  // namespace detail

// Row i of `motion` belongs with row i of `text`. Each item is ranked against
// a pool of its own text and pool-1 other items' texts drawn from `seed`; a
// hit is fewer than k candidates strictly closer than the true text.
inline double r_precision(const Tensor& motion, const Tensor& text, std::size_t pool = 32, std::size_t k = 3,
                          std::uint64_t seed = 0) {
  detail::require_features(motion, "r_precision");
  detail::require_features(text, "r_precision");
  if (motion.shape() != text.shape()) throw ShapeError("r_precision: motion and text features differ in shape");
  const std::size_t n = motion.rows();
  if (pool < 1 || k < 1) throw ValidationError("r_precision: pool and k must be positive");
  if (n < pool) {
    throw ValidationError("r_precision: " + std::to_string(n) + " items, pool needs " + std::to_string(pool));
  }
  Rng rng(mix_seed(seed, 0x59));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // others: indices != i
    auto pick = detail::sample_without_replacement(n - 1, pool - 1, rng);
    const double own = detail::row_distance(motion, i, text, i);
    std::size_t closer = 0;
    for (std::size_t p : pick) {
      const std::size_t j = p < i ? p : p + 1;
      if (detail::row_distance(motion, i, text, j) < own) ++closer;
    }
    if (closer < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline Gaussian fit_gaussian(const Tensor& feats) {
  detail::require_features(feats, "fid");
  if (feats.rows() < 2) throw ValidationError("fid: need at least 2 samples per set");
  const Eigen::MatrixXd x = detail::to_matrix(feats);
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - g.mean.transpose();
  g.cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  return g;
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Frechet distance between Gaussian fits. tr((A B)^1/2) is taken as
// tr((sqrt(A) B sqrt(A))^1/2), a symmetric PSD product with the same
// spectrum; negative eigenvalues from round-off are clamped at zero.
inline double fid(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2 && a.cols() != b.cols()) throw ShapeError("fid: feature widths differ");
  Gaussian ga = fit_gaussian(a), gb = fit_gaussian(b);
  const auto d = ga.cov.rows();
  const Eigen::MatrixXd reg = 1e-6 * Eigen::MatrixXd::Identity(d, d);
  ga.cov += reg;
  gb.cov += reg;
  const Eigen::MatrixXd sa = psd_sqrt(ga.cov);
  const Eigen::MatrixXd prod = sa * gb.cov * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (prod + prod.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double v = (ga.mean - gb.mean).squaredNorm() + ga.cov.trace() + gb.cov.trace() - 2.0 * tr_sqrt;
  return std::max(v, 0.0);
}

// Mean L2 between paired rows of two seeded disjoint subsets. Items are
// ordered by id first, so the value does not depend on input order.
inline double diversity(const std::vector<std::string>& ids, const Tensor& feats, std::size_t subset,
                        std::uint64_t seed = 0) {
  detail::require_features(feats, "diversity");
  if (ids.size() != feats.rows()) throw ShapeError("diversity: one id per feature row required");
  if (subset == 0) throw ValidationError("diversity: subset size must be positive");
  if (feats.rows() < 2 * subset) {
    throw ValidationError("diversity: " + std::to_string(feats.rows()) + " samples, two disjoint subsets of " +
                          std::to_string(subset) + " needed");
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return ids[x] < ids[y]; });
  Rng rng(mix_seed(seed, 0xd1));
  const auto pick = detail::sample_without_replacement(order.size(), 2 * subset, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < subset; ++i) s += detail::row_distance(feats, order[pick[i]], feats, order[pick[subset + i]]);
  return s / static_cast<double>(subset);
}

// Diversity within each text class, averaged over the classes that hold
// enough samples. Throws when none does.
inline double multimodality(const std::vector<std::string>& ids, const std::vector<std::string>& texts,
                            const Tensor& feats, std::size_t subset, std::uint64_t seed = 0) {
  detail::require_features(feats, "multimodality");
  if (ids.size() != feats.rows() || texts.size() != feats.rows()) {
    throw ShapeError("multimodality: one id and one text per feature row required");
  }
  std::map<std::string, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < texts.size(); ++i) classes[texts[i]].push_back(i);
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& [text, rows] : classes) {
    if (rows.size() < 2 * subset) continue;
    Tensor sub({rows.size(), feats.cols()});
    std::vector<std::string> sub_ids;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy(feats.data() + rows[r] * feats.cols(), feats.data() + (rows[r] + 1) * feats.cols(),
                sub.data() + r * feats.cols());
      sub_ids.push_back(ids[rows[r]]);
    }
    total += diversity(sub_ids, sub, subset, mix_seed(seed, hash_name(text)));
    ++used;
  }
  if (used == 0) {
    throw ValidationError("multimodality: no text class has " + std::to_string(2 * subset) + " samples");
  }
  return total / static_cast<double>(used);
}

}  // namespace cghoi::metrics
