#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "spherebg/fields.hpp"
#include "spherebg/pipeline.hpp"
#include "spherebg/random.hpp"
#include "spherebg/synthetic.hpp"

namespace spherebg {

struct GradCheckOptions {
  std::uint64_t seed = 0;
  int image_size = 4;
  double lambda_fg = 0.5;
  double lambda_bg = 0.5;
  double step = 1e-5;                // central-difference step
  double denominator_floor = 1e-12;  // relative error uses max(|a|, |n|, floor)
  bool batched_route = false;
};

struct GradCheckResult {
  std::size_t parameter_count = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double loss = 0.0;
};

/// Small fields (355 parameters) with smooth hidden units and generic
/// random weights.
inline SceneParameters gradcheck_scene(std::uint64_t seed) {
  MlpSpec fg = foreground_spec({12}, 2, 0, 3);
  fg.hidden_activation = Activation::Softplus;
  MlpSpec bg = background_spec(3, 2, {12});
  bg.hidden_activation = Activation::Softplus;
  SceneParameters p = init_parameters(fg, bg, seed, 3.0);
  Rng rng(mix_seed(seed, 0x6772616463686bULL));
  for (double& v : p.flat) v += rng.uniform(-0.5, 0.5);
  return p;
}

/// One orbit view of the default synthetic scene, every pixel supervised.
/// The camera is fixed here rather than following the dataset defaults.
inline std::vector<SupervisedRay> gradcheck_batch(int size) {
  SynthOptions o;
  o.width = o.height = size;
  o.n_views = 5;
  o.focal_scale = 1.1;
  const auto cams = orbit_cameras(o);
  const View v = render_view(default_scene(), cams[1]);
  std::vector<SupervisedRay> batch;
  const auto rays = generate_rays(v.camera);
  for (std::size_t i = 0; i < rays.size(); ++i)
    batch.push_back({rays[i], {v.rgb.data[3 * i], v.rgb.data[3 * i + 1], v.rgb.data[3 * i + 2]}});
  return batch;
}

/// Analytic gradient of the full loss against central differences of the
/// plain route. Sample positions are stratified midpoints, which do not
/// depend on the parameters.
inline GradCheckResult gradient_check(const GradCheckOptions& o = {}) {
  SceneParameters p = gradcheck_scene(o.seed);
  const auto batch = gradcheck_batch(o.image_size);
  SamplingConfig cfg;
  cfg.coarse_count = 8;
  cfg.fine_count = 0;
  cfg.deterministic = true;
  const LossWeights lw{o.lambda_fg, o.lambda_bg};
  const BatchGradient g =
      o.batched_route ? batch_loss_gradient_batched(p, batch, cfg, lw) : batch_loss_gradient(p, batch, cfg, lw);
  GradCheckResult r;
  r.parameter_count = p.size();
  r.loss = g.loss.total;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double x = p.flat[k];
    p.flat[k] = x + o.step;
    const double up = batch_loss(p, batch, cfg, lw).total;
    p.flat[k] = x - o.step;
    const double down = batch_loss(p, batch, cfg, lw).total;
    p.flat[k] = x;
    const double numeric = (up - down) / (2.0 * o.step);
    const double analytic = g.gradient[k];
    const double abs_err = std::abs(analytic - numeric);
    const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), o.denominator_floor});
    r.max_absolute_error = std::max(r.max_absolute_error, abs_err);
    if (rel > r.max_relative_error || k == 0) {
      r.max_relative_error = rel;
      r.worst_index = k;
      r.worst_analytic = analytic;
      r.worst_numeric = numeric;
    }
  }
  return r;
}

}  // namespace spherebg
