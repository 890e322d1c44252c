#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "spherebg/error.hpp"

namespace spherebg {

/// Ascending foreground sample distances along a ray, all within [near, far].
class SampleDistances {
 public:
  SampleDistances(std::vector<double> t, double near, double far) : t_(std::move(t)), near_(near), far_(far) {
    require(near > 0.0 && near < far, ErrorCode::InvalidRange, "sample range requires 0 < near < far");
    require(!t_.empty(), ErrorCode::InvalidArgument, "at least one sample is required");
    require(t_.front() >= near && t_.back() <= far, ErrorCode::InvalidRange, "samples must lie within [near, far]");
    for (std::size_t i = 1; i < t_.size(); ++i)
      require(t_[i - 1] < t_[i], ErrorCode::InvariantViolation, "sample distances must be strictly ascending");
  }

  std::span<const double> t() const { return t_; }
  std::size_t size() const { return t_.size(); }
  double near() const { return near_; }
  double far() const { return far_; }
  double operator[](std::size_t i) const { return t_[i]; }

 private:
  std::vector<double> t_;
  double near_;
  double far_;
};

struct Deltas {
  std::vector<double> delta;
};

inline constexpr double kImportanceFloor = 1e-5;

/// One sample per equal-width bin. With empty `jitter` every sample sits at
/// its bin midpoint; otherwise sample i is offset by jitter[i] in [0, 1).
inline SampleDistances stratified_sample(double near, double far, int count, std::span<const double> jitter = {}) {
  require(near > 0.0 && near < far, ErrorCode::InvalidRange, "stratified_sample requires 0 < near < far");
  require(count >= 1, ErrorCode::InvalidArgument, "stratified_sample needs count >= 1");
  require(jitter.empty() || jitter.size() == static_cast<std::size_t>(count), ErrorCode::ShapeMismatch,
          "jitter must be empty or hold one value per bin");
  const double width = (far - near) / count;
  std::vector<double> t(count);
  for (int i = 0; i < count; ++i) {
    const double u = jitter.empty() ? 0.5 : std::clamp(jitter[i], 0.0, 1.0);
    t[i] = std::min(near + (i + u) * width, far);
  }
  // Rounding at huge counts could tie two neighbours.
  for (int i = 1; i < count; ++i)
    if (t[i] <= t[i - 1]) t[i] = std::nextafter(t[i - 1], far);
  return SampleDistances(std::move(t), near, far);
}

/// Bin edges implied by a set of samples: near, midpoints between
/// neighbours, far. For midpoint-stratified samples these are the strata.
inline std::vector<double> sample_bin_edges(const SampleDistances& s) {
  std::vector<double> edges(s.size() + 1);
  edges.front() = s.near();
  edges.back() = s.far();
  for (std::size_t i = 1; i < s.size(); ++i) edges[i] = 0.5 * (s[i - 1] + s[i]);
  return edges;
}

/// Inverse-CDF draws from the piecewise-constant histogram whose bin i holds
/// mass proportional to weights[i] + kImportanceFloor. Returns only the fine
/// samples (unsorted, one per random).
inline std::vector<double> draw_importance(const SampleDistances& coarse, std::span<const double> weights,
                                           std::span<const double> randoms) {
  require(weights.size() == coarse.size(), ErrorCode::ShapeMismatch, "one weight per coarse sample is required");
  const auto edges = sample_bin_edges(coarse);
  std::vector<double> cdf(weights.size() + 1, 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = std::isfinite(weights[i]) ? std::max(weights[i], 0.0) : 0.0;
    cdf[i + 1] = cdf[i] + w + kImportanceFloor;
  }
  const double total = cdf.back();
  for (double& c : cdf) c /= total;
  cdf.back() = 1.0;

  std::vector<double> out;
  out.reserve(randoms.size());
  for (double u : randoms) {
    u = std::clamp(u, 0.0, 1.0);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t bin = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cdf.begin() - 1, 0));
    bin = std::min(bin, weights.size() - 1);
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = mass > 0.0 ? std::clamp((u - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
    out.push_back(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
  }
  return out;
}

/// Coarse samples merged with fine samples drawn in proportion to the coarse
/// aggregation weights. Output size is coarse.size() + randoms.size().
inline SampleDistances importance_sample(const SampleDistances& coarse, std::span<const double> coarse_weights,
                                         std::span<const double> randoms) {
  auto fine = draw_importance(coarse, coarse_weights, randoms);
  std::vector<double> merged(coarse.t().begin(), coarse.t().end());
  merged.insert(merged.end(), fine.begin(), fine.end());
  std::sort(merged.begin(), merged.end());
  // Exact coincidences are measure-zero but would break strict ordering.
  for (std::size_t i = 1; i < merged.size(); ++i)
    if (merged[i] <= merged[i - 1]) merged[i] = std::nextafter(merged[i - 1], coarse.far() + 1.0);
  const double far = std::max(coarse.far(), merged.back());
  return SampleDistances(std::move(merged), coarse.near(), far);
}

/// delta_i = t_{i+1} - t_i; the last interval closes at `t_bg` when given,
/// else at the far bound.
inline Deltas compute_deltas(const SampleDistances& samples, std::optional<double> t_bg = std::nullopt) {
  Deltas d;
  const auto t = samples.t();
  d.delta.resize(t.size());
  for (std::size_t i = 0; i + 1 < t.size(); ++i) d.delta[i] = t[i + 1] - t[i];
  const double end = t_bg ? *t_bg : samples.far();
  d.delta.back() = end - t.back();
  require(d.delta.back() >= 0.0, ErrorCode::InvalidRange, "closing distance lies before the last sample");
  return d;
}

}  // namespace spherebg
