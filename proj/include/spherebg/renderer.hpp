#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "spherebg/detail/parallel.hpp"
#include "spherebg/error.hpp"
#include "spherebg/fields.hpp"
#include "spherebg/geometry.hpp"
#include "spherebg/image.hpp"
#include "spherebg/random.hpp"
#include "spherebg/sampling.hpp"

namespace spherebg {

/// Everything the rendering integral consumes for one ray.
struct RaySampleSet {
  SampleDistances distances;
  Deltas deltas;
  std::vector<double> densities;
  Eigen::MatrixXd features;  // N x F
  std::vector<double> bg_feature;
  double t_bg = 0.0;

  void validate() const {
    const std::size_t n = distances.size();
    require(deltas.delta.size() == n && densities.size() == n && static_cast<std::size_t>(features.rows()) == n,
            ErrorCode::ShapeMismatch, "ray sample set vectors must all have one entry per sample");
    require(static_cast<std::size_t>(features.cols()) == bg_feature.size(), ErrorCode::ShapeMismatch,
            "foreground and background feature widths differ");
    require(t_bg >= distances.t().back(), ErrorCode::InvariantViolation, "t_bg lies before the last sample");
  }
};

struct RayRenderResult {
  std::vector<double> pixel_feature;
  std::vector<double> weights;
  double t_bg_transmittance = 1.0;
  double alpha = 0.0;
  double expected_depth = 0.0;
};

/// Generic rendering integral over S = double or ad::Var.
///   w_i  = T_i (1 - exp(-sigma_i delta_i)),  T_i = exp(-sum_{j<i} sigma_j delta_j)
///   T_bg = exp(-sum_j sigma_j delta_j)
///   v    = sum_i w_i Phi_i + T_bg Phi_bg
/// `features[i]` is the feature vector of sample i.
template <class S>
struct Composite {
  std::vector<S> pixel;
  std::vector<S> weights;
  S t_bg_transmittance;
  S depth;
};

template <class S, class Lift>
Composite<S> composite(std::span<const S> sigma, std::span<const double> delta, std::span<const double> t,
                       const std::vector<std::vector<S>>& features, std::span<const S> bg_feature, double t_bg,
                       Lift lift) {
  using namespace ad::ops;
  const std::size_t n = sigma.size();
  const std::size_t f = bg_feature.size();
  Composite<S> out;
  out.weights.reserve(n);
  if (n == 0) {
    out.t_bg_transmittance = lift(1.0);
    out.pixel.assign(bg_feature.begin(), bg_feature.end());
    out.depth = lift(t_bg);
    return out;
  }
  std::optional<S> optical_depth;
  for (std::size_t i = 0; i < n; ++i) {
    const S x = sigma[i] * delta[i];
    const S absorbed = 1.0 - exp(-x);
    if (!optical_depth) {
      out.weights.push_back(absorbed);
      optical_depth = x;
    } else {
      out.weights.push_back(exp(-*optical_depth) * absorbed);
      optical_depth = *optical_depth + x;
    }
  }
  out.t_bg_transmittance = exp(-*optical_depth);
  out.pixel.reserve(f);
  for (std::size_t c = 0; c < f; ++c) {
    S acc = out.t_bg_transmittance * bg_feature[c];
    for (std::size_t i = 0; i < n; ++i) acc = acc + out.weights[i] * features[i][c];
    out.pixel.push_back(acc);
  }
  S depth = out.t_bg_transmittance * t_bg;
  for (std::size_t i = 0; i < n; ++i) depth = depth + out.weights[i] * t[i];
  out.depth = depth;
  return out;
}

inline RayRenderResult composite_ray(const RaySampleSet& s) {
  s.validate();
  for (std::size_t i = 0; i < s.densities.size(); ++i)
    require(std::isfinite(s.densities[i]) && std::isfinite(s.deltas.delta[i]), ErrorCode::NonFiniteInput,
            "densities and deltas must be finite");
  const std::size_t n = s.densities.size();
  std::vector<std::vector<double>> feats(n);
  for (std::size_t i = 0; i < n; ++i)
    feats[i].assign(s.features.row(static_cast<Eigen::Index>(i)).begin(),
                    s.features.row(static_cast<Eigen::Index>(i)).end());
  const auto c = composite<double>(std::span<const double>(s.densities), s.deltas.delta, s.distances.t(), feats,
                                   std::span<const double>(s.bg_feature), s.t_bg, [](double v) { return v; });
  RayRenderResult r;
  r.pixel_feature = c.pixel;
  r.weights = c.weights;
  r.t_bg_transmittance = c.t_bg_transmittance;
  r.alpha = 1.0 - c.t_bg_transmittance;
  r.expected_depth = c.depth;
  return r;
}

enum class RenderMode { Full, ForegroundOnly, BackgroundOnly };

struct SamplingConfig {
  double near = 0.5;
  double far = 3.5;
  int coarse_count = 48;
  int fine_count = 48;
  bool deterministic = true;
  std::uint64_t seed = 0;
};

/// Per-ray geometry: the sphere exit and the foreground sampling interval,
/// which ends just before the sphere so no sample reaches the background.
struct RayGeometry {
  SphereHit hit;
  SphericalPoint s_bg;
  double near = 0.0;
  double far = 0.0;
  bool has_foreground() const { return far > near; }
};

inline RayGeometry ray_geometry(const Ray& ray, double sphere_radius, const SamplingConfig& cfg) {
  RayGeometry g;
  g.hit = ray_sphere_intersection(ray, sphere_radius);
  g.s_bg = cartesian_to_spherical(g.hit.point);
  g.near = cfg.near;
  g.far = std::min(cfg.far, g.hit.t_bg - 1e-6 * std::max(1.0, g.hit.t_bg));
  return g;
}

/// Foreground densities at the given distances (plain evaluation).
inline std::vector<double> densities_at(const SceneParameters& p, const Ray& ray, std::span<const double> t) {
  std::vector<Vec3> pts(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) pts[i] = ray.at(t[i]);
  const Vec3 d = ray.direction();
  const auto b = eval_foreground_batch(p, pts, std::span<const Vec3>(&d, 1));
  return std::vector<double>(b.density.data(), b.density.data() + b.density.size());
}

/// Weights of a plain composite with zero background feature, used to drive
/// importance sampling.
inline std::vector<double> coarse_weights(std::span<const double> sigma, std::span<const double> delta) {
  std::vector<double> w(sigma.size());
  double od = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double x = sigma[i] * delta[i];
    w[i] = std::exp(-od) * (1.0 - std::exp(-x));
    od += x;
  }
  return w;
}

/// Sample distances for one ray: stratified coarse samples (midpoints in
/// deterministic mode, jittered from `rng` otherwise), optionally merged
/// with importance samples drawn from the coarse weights.
inline std::optional<SampleDistances> plan_samples(const SceneParameters& p, const Ray& ray, const RayGeometry& g,
                                                   const SamplingConfig& cfg, Rng& rng) {
  if (!g.has_foreground()) return std::nullopt;
  std::vector<double> jitter;
  if (!cfg.deterministic) {
    jitter.resize(static_cast<std::size_t>(cfg.coarse_count));
    for (double& u : jitter) u = rng.uniform();
  }
  SampleDistances coarse = stratified_sample(g.near, g.far, cfg.coarse_count, jitter);
  if (cfg.fine_count <= 0) return coarse;
  const auto sigma = densities_at(p, ray, coarse.t());
  const auto deltas = compute_deltas(coarse, g.hit.t_bg);
  const auto w = coarse_weights(sigma, deltas.delta);
  std::vector<double> u(static_cast<std::size_t>(cfg.fine_count));
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = cfg.deterministic ? (k + 0.5) / u.size() : rng.uniform();
  return importance_sample(coarse, w, u);
}

inline Rng ray_rng(const SamplingConfig& cfg, std::uint64_t ray_index) {
  return Rng(mix_seed(cfg.seed, ray_index));
}

struct RenderOutput {
  Image image;      // H x W x F
  Image alpha_map;  // H x W x 1
  Image depth_map;  // H x W x 1
  Camera camera;
};

/// Renders a batch of rays. Ray k draws its randomness from
/// ray_rng(cfg, first_index + k), so results do not depend on threading.
inline std::vector<RayRenderResult> render_rays(const SceneParameters& p, std::span<const Ray> rays, RenderMode mode,
                                                const SamplingConfig& cfg, std::uint64_t first_index = 0) {
  std::vector<RayGeometry> geo;
  geo.reserve(rays.size());
  for (const Ray& r : rays) geo.push_back(ray_geometry(r, p.sphere_radius, cfg));
  Eigen::MatrixXd bg;
  const int fdim = p.feature_dim();
  if (mode != RenderMode::ForegroundOnly) {
    std::vector<SphericalPoint> s(rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) s[i] = geo[i].s_bg;
    bg = eval_background_batch(p, s);
  } else {
    bg = Eigen::MatrixXd::Zero(fdim, static_cast<Eigen::Index>(rays.size()));
  }

  std::vector<RayRenderResult> out(rays.size());
  detail::parallel_for(rays.size(), [&](std::size_t i) {
    const auto col = bg.col(static_cast<Eigen::Index>(i));
    std::vector<double> bg_feature(col.data(), col.data() + col.size());
    RayRenderResult r;
    if (mode == RenderMode::BackgroundOnly || !geo[i].has_foreground()) {
      r.pixel_feature = bg_feature;
      r.t_bg_transmittance = 1.0;
      r.alpha = 0.0;
      r.expected_depth = geo[i].hit.t_bg;
      out[i] = std::move(r);
      return;
    }
    Rng rng = ray_rng(cfg, first_index + i);
    SampleDistances samples = *plan_samples(p, rays[i], geo[i], cfg, rng);
    std::vector<Vec3> pts(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) pts[k] = rays[i].at(samples[k]);
    const Vec3 d = rays[i].direction();
    const auto fg = eval_foreground_batch(p, pts, std::span<const Vec3>(&d, 1));
    Deltas deltas = compute_deltas(samples, geo[i].hit.t_bg);
    RaySampleSet set{std::move(samples),
                     std::move(deltas),
                     std::vector<double>(fg.density.data(), fg.density.data() + fg.density.size()),
                     fg.feature.transpose(),
                     std::move(bg_feature),
                     geo[i].hit.t_bg};
    out[i] = composite_ray(set);
  });
  return out;
}

inline RenderOutput render(const SceneParameters& p, const Camera& camera, RenderMode mode,
                           const SamplingConfig& cfg) {
  const auto rays = generate_rays(camera);
  const auto results = render_rays(p, rays, mode, cfg);
  const int fdim = p.feature_dim();
  RenderOutput out{Image(camera.width(), camera.height(), fdim), Image(camera.width(), camera.height(), 1),
                   Image(camera.width(), camera.height(), 1), camera};
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const auto px = rays[i].pixel();
    for (int c = 0; c < fdim; ++c) out.image.at(px.row, px.col, c) = results[i].pixel_feature[c];
    out.alpha_map.at(px.row, px.col) = results[i].alpha;
    out.depth_map.at(px.row, px.col) = results[i].expected_depth;
  }
  return out;
}

/// out = fg + (1 - alpha) bg, with fg already premultiplied by alpha (as a
/// foreground-only render is).
inline Image composite_over(const Image& fg, const Image& alpha, const Image& bg) {
  require_same_shape(fg, bg, "foreground and background images differ in shape");
  require(alpha.width == fg.width && alpha.height == fg.height && alpha.channels == 1, ErrorCode::ShapeMismatch,
          "alpha map must be H x W x 1 matching the foreground");
  Image out(fg.width, fg.height, fg.channels);
  for (int r = 0; r < fg.height; ++r)
    for (int c = 0; c < fg.width; ++c) {
      const double a = alpha.at(r, c);
      require(a >= 0.0 && a <= 1.0, ErrorCode::OutOfRange, "alpha must lie in [0, 1]");
      for (int ch = 0; ch < fg.channels; ++ch) out.at(r, c, ch) = fg.at(r, c, ch) + (1.0 - a) * bg.at(r, c, ch);
    }
  return out;
}

}  // namespace spherebg
