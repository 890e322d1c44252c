#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spherebg/config.hpp"
#include "spherebg/error.hpp"
#include "spherebg/fields.hpp"
#include "spherebg/pipeline.hpp"
#include "spherebg/renderer.hpp"
#include "spherebg/synthetic.hpp"

namespace spherebg {

/// final * (e^{k min(step, ramp) / ramp} - 1) / (e^k - 1).
inline double lambda_schedule(int step, double final_value, int ramp_steps, double curvature = 5.0) {
  require(step >= 0, ErrorCode::InvalidArgument, "schedule step must be >= 0");
  if (ramp_steps <= 0 || step >= ramp_steps) return final_value;
  const double x = static_cast<double>(step) / ramp_steps;
  return final_value * std::expm1(curvature * x) / std::expm1(curvature);
}

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit OptimizerState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                      const AdamParams& a) {
  require(params.size() == grads.size() && state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorCode::ShapeMismatch, "adam: parameter, gradient and moment sizes differ");
  for (double g : grads) require(std::isfinite(g), ErrorCode::NonFiniteGradient, "adam: non-finite gradient");
  ++state.step;
  const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = a.beta1 * state.m[i] + (1.0 - a.beta1) * grads[i];
    state.v[i] = a.beta2 * state.v[i] + (1.0 - a.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= a.lr * mhat / (std::sqrt(vhat) + a.eps);
  }
}

struct Metrics {
  double psnr = 0.0;
  double mask_iou = 0.0;
  double binarization_rate = 0.0;
};

inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// IoU of (alpha > 0.5) against (gt > 0.5); two empty masks give 1.
inline double mask_iou(std::span<const double> alpha, std::span<const double> gt) {
  require(alpha.size() == gt.size(), ErrorCode::ShapeMismatch, "mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const bool a = alpha[i] > 0.5, b = gt[i] > 0.5;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Fraction of pixels whose background transmittance lies outside (0.1, 0.9).
inline double binarization_rate(std::span<const double> alpha) {
  if (alpha.empty()) return 1.0;
  std::size_t n = 0;
  for (double a : alpha) {
    const double t = 1.0 - a;
    n += t <= 0.1 || t >= 0.9;
  }
  return static_cast<double>(n) / static_cast<double>(alpha.size());
}

enum class Split { Train, HeldOut, All };

inline std::vector<int> split_indices(const SsoDataset& d, Split s) {
  if (s == Split::Train) return d.train;
  if (s == Split::HeldOut) return d.heldout;
  std::vector<int> all(d.views.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return all;
}

/// Metrics pooled over every pixel of the selected views.
inline Metrics evaluate(const SceneParameters& p, const SsoDataset& d, Split split, const SamplingConfig& cfg) {
  const auto views = split_indices(d, split);
  require(!views.empty(), ErrorCode::InvalidArgument, "evaluation split is empty");
  double se = 0.0;
  std::size_t values = 0;
  std::vector<double> alpha, gt;
  for (int vi : views) {
    const View& v = d.views[static_cast<std::size_t>(vi)];
    const RenderOutput out = render(p, v.camera, RenderMode::Full, cfg);
    for (std::size_t k = 0; k < out.image.data.size(); ++k) {
      const double e = out.image.data[k] - v.rgb.data[k];
      se += e * e;
    }
    values += out.image.data.size();
    alpha.insert(alpha.end(), out.alpha_map.data.begin(), out.alpha_map.data.end());
    gt.insert(gt.end(), v.alpha.data.begin(), v.alpha.data.end());
  }
  return {psnr_from_mse(se / static_cast<double>(values)), mask_iou(alpha, gt), binarization_rate(alpha)};
}

struct HistoryEntry {
  int step = 0;
  LossBreakdown loss;
  std::optional<Metrics> heldout;
};

struct TrainResult {
  SceneParameters params;
  std::vector<HistoryEntry> history;
};

inline SceneParameters initial_parameters(const TrainConfig& c) {
  return init_parameters(c.foreground_spec(), c.background_spec(), c.seed, c.sphere_radius);
}

/// Learning rate decays exponentially from learning_rate to learning_rate_final.
inline double learning_rate_at(const TrainConfig& c, int step) {
  if (c.steps <= 1) return c.learning_rate;
  const double x = static_cast<double>(step) / (c.steps - 1);
  return c.learning_rate * std::pow(c.learning_rate_final / c.learning_rate, x);
}

using TrainCallback = std::function<void(const HistoryEntry&, const SceneParameters&)>;

/// Single-scene optimization. Ray batches are drawn uniformly over
/// (training view, pixel) pairs from a generator seeded per step.
inline TrainResult train_sso(const SsoDataset& d, const TrainConfig& c, const TrainCallback& on_log = {},
                             std::optional<SceneParameters> start = std::nullopt) {
  c.validate(true);
  d.validate();
  TrainResult result{start ? std::move(*start) : initial_parameters(c), {}};
  SceneParameters& p = result.params;
  if (c.steps == 0) return result;
  for (const auto& v : d.views)
    require(v.camera.position().norm() < c.sphere_radius, ErrorCode::CameraOutsideSphere,
            "a dataset camera lies outside the background sphere");

  std::vector<std::vector<Ray>> rays;
  for (int vi : d.train) rays.push_back(generate_rays(d.views[static_cast<std::size_t>(vi)].camera));
  const std::size_t pixels = static_cast<std::size_t>(d.width()) * d.height();
  OptimizerState opt(p.size());
  std::vector<SupervisedRay> batch;
  batch.reserve(static_cast<std::size_t>(c.batch_rays));
  const int ramp = c.effective_ramp_steps();
  BatchWorkspace ws;

  for (int step = 0; step < c.steps; ++step) {
    Rng pick(mix_seed(mix_seed(c.seed, 0x626174636800ULL), static_cast<std::uint64_t>(step)));
    batch.clear();
    for (int k = 0; k < c.batch_rays; ++k) {
      const std::size_t v = pick.below(rays.size());
      const std::size_t px = pick.below(pixels);
      const Image& rgb = d.views[static_cast<std::size_t>(d.train[v])].rgb;
      const double* t = &rgb.data[px * 3];
      batch.push_back({rays[v][px], {t[0], t[1], t[2]}});
    }
    const LossWeights lw{lambda_schedule(step, c.lambda_fg_final, ramp, c.ramp_curvature),
                         lambda_schedule(step, c.lambda_bg_final, ramp, c.ramp_curvature)};
    const SamplingConfig sc = c.sampling(false, mix_seed(c.seed, 0x73616d706c6500ULL + static_cast<std::uint64_t>(step)));
    BatchGradient bg;
    try {
      bg = batch_loss_gradient_batched(p, batch, sc, lw, &ws);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      fail(ErrorCode::Diverged, "loss became non-finite at step " + std::to_string(step));
    }
    adam_step(p.flat, bg.gradient.values, opt,
              {learning_rate_at(c, step), c.adam_beta1, c.adam_beta2, c.adam_epsilon});

    const bool last = step + 1 == c.steps;
    const bool log = (step + 1) % c.log_every == 0 || last;
    const bool eval = c.eval_every > 0 && !d.heldout.empty() && ((step + 1) % c.eval_every == 0 || last);
    if (log || eval) {
      HistoryEntry h{step + 1, bg.loss, std::nullopt};
      if (eval) h.heldout = evaluate(p, d, Split::HeldOut, c.sampling(true));
      result.history.push_back(h);
      if (on_log) on_log(h, p);
    }
  }
  return result;
}

}  // namespace spherebg
