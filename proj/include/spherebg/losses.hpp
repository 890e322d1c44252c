#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "spherebg/autodiff.hpp"
#include "spherebg/error.hpp"
#include "spherebg/image.hpp"

namespace spherebg {

struct LossBreakdown {
  double recon = 0.0;
  double l_fg = 0.0;
  double l_bg = 0.0;
  double total = 0.0;
  double lambda_fg = 0.0;
  double lambda_bg = 0.0;
};

/// Mean over rays of min(T_bg, 1 - T_bg).
inline double background_transmittance_loss(std::span<const double> t_bg) {
  if (t_bg.empty()) return 0.0;
  double sum = 0.0;
  for (double t : t_bg) {
    require(t >= 0.0 && t <= 1.0, ErrorCode::OutOfRange, "background transmittance must lie in [0, 1]");
    sum += std::min(t, 1.0 - t);
  }
  return sum / static_cast<double>(t_bg.size());
}

/// One ray's share of the foreground density loss:
///   sum_{i,j} w_i w_j |t_i - t_j| + 1/3 sum_i w_i^2 delta_i
/// over all ordered pairs.
inline double foreground_density_term(std::span<const double> w, std::span<const double> t,
                                      std::span<const double> delta) {
  require(w.size() == t.size() && w.size() == delta.size(), ErrorCode::ShapeMismatch,
          "weights, distances and deltas must have equal length");
  double pairs = 0.0;
  double self = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) pairs += w[i] * w[j] * std::abs(t[i] - t[j]);
    self += w[i] * w[i] * delta[i];
  }
  return pairs + self / 3.0;
}

struct RayWeights {
  std::vector<double> w;
  std::vector<double> t;
  std::vector<double> delta;
};

/// Mean over rays of the per-ray foreground density term.
inline double foreground_density_loss(std::span<const RayWeights> rays) {
  if (rays.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rays) {
    require(std::all_of(r.w.begin(), r.w.end(), [](double x) { return x >= 0.0; }), ErrorCode::OutOfRange,
            "aggregation weights must be non-negative");
    sum += foreground_density_term(r.w, r.t, r.delta);
  }
  return sum / static_cast<double>(rays.size());
}

/// Mean squared error over all pixels and channels.
inline double reconstruction_loss(const Image& rendered, const Image& target) {
  require_same_shape(rendered, target, "rendered and target images differ in shape");
  if (rendered.data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(rendered.data.size());
}

inline LossBreakdown total_loss(double recon, double l_fg, double l_bg, double lambda_fg, double lambda_bg) {
  for (double v : {recon, l_fg, l_bg, lambda_fg, lambda_bg})
    require(std::isfinite(v), ErrorCode::NonFinite, "loss inputs must be finite");
  require(lambda_fg >= 0.0 && lambda_bg >= 0.0, ErrorCode::InvalidArgument, "loss weights must be non-negative");
  LossBreakdown b{recon, l_fg, l_bg, 0.0, lambda_fg, lambda_bg};
  b.total = recon + lambda_fg * l_fg + lambda_bg * l_bg;
  return b;
}

// Recorded per-ray terms for the gradient path.

/// min(T_bg, 1 - T_bg); the first branch wins ties.
template <class S>
S binarization_term(S t_bg) {
  using namespace ad::ops;
  return min(t_bg, 1.0 - t_bg);
}

/// Same quantity as foreground_density_term in O(N) for ascending t:
///   sum_{i,j} w_i w_j |t_i - t_j| = 2 sum_i w_i (t_i W_{<i} - S_{<i}),
/// with W_{<i} = sum_{j<i} w_j and S_{<i} = sum_{j<i} w_j t_j.
template <class S>
S foreground_density_term_sorted(std::span<const S> w, std::span<const double> t, std::span<const double> delta) {
  require(w.size() == t.size() && w.size() == delta.size() && !w.empty(), ErrorCode::ShapeMismatch,
          "weights, distances and deltas must have equal non-zero length");
  S self = w[0] * w[0] * delta[0];
  S prefix_w = w[0];
  S prefix_wt = w[0] * t[0];
  std::optional<S> pairs;
  for (std::size_t i = 1; i < w.size(); ++i) {
    const S term = w[i] * (prefix_w * t[i] - prefix_wt);
    pairs = pairs ? *pairs + term : term;
    self = self + w[i] * w[i] * delta[i];
    prefix_w = prefix_w + w[i];
    prefix_wt = prefix_wt + w[i] * t[i];
  }
  return pairs ? 2.0 * *pairs + self * (1.0 / 3.0) : self * (1.0 / 3.0);
}

}  // namespace spherebg
