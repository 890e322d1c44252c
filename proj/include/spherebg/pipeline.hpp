#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spherebg/autodiff.hpp"
#include "spherebg/detail/parallel.hpp"
#include "spherebg/fields.hpp"
#include "spherebg/losses.hpp"
#include "spherebg/renderer.hpp"

// Render-then-loss over a batch of supervised rays, in two independent
// routes: a plain forward pass built from the renderer and the loss
// functions, and a recorded pass that returns the parameter gradient.
// Every loss term is a mean over rays, so the batch objective splits into
// per-ray contributions and each ray gets its own short-lived tape.

namespace spherebg {

struct SupervisedRay {
  Ray ray;
  std::vector<double> target;  // one value per feature channel
};

struct LossWeights {
  double lambda_fg = 0.0;
  double lambda_bg = 0.0;
};

/// Plain route: renders the rays and assembles the losses from the loss
/// module. Ray k uses ray_rng(cfg, k) exactly like the recorded route.
inline LossBreakdown batch_loss(const SceneParameters& p, std::span<const SupervisedRay> batch,
                                const SamplingConfig& cfg, LossWeights lw) {
  std::vector<Ray> rays;
  rays.reserve(batch.size());
  for (const auto& b : batch) rays.push_back(b.ray);
  const int fdim = p.feature_dim();
  Image rendered(static_cast<int>(batch.size()), 1, fdim);
  Image target(static_cast<int>(batch.size()), 1, fdim);
  std::vector<double> t_bg(batch.size());
  std::vector<RayWeights> weights;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Ray& ray = rays[i];
    const RayGeometry g = ray_geometry(ray, p.sphere_radius, cfg);
    const std::vector<double> bg = eval_background(p, g.s_bg);
    Rng rng = ray_rng(cfg, i);
    const auto samples = plan_samples(p, ray, g, cfg, rng);
    RayRenderResult r;
    if (!samples) {
      r.pixel_feature = bg;
      r.t_bg_transmittance = 1.0;
    } else {
      std::vector<Vec3> pts(samples->size());
      for (std::size_t k = 0; k < pts.size(); ++k) pts[k] = ray.at((*samples)[k]);
      const Vec3 d = ray.direction();
      const auto fg = eval_foreground_batch(p, pts, std::span<const Vec3>(&d, 1));
      Deltas deltas = compute_deltas(*samples, g.hit.t_bg);
      RaySampleSet set{*samples,
                       deltas,
                       std::vector<double>(fg.density.data(), fg.density.data() + fg.density.size()),
                       fg.feature.transpose(),
                       bg,
                       g.hit.t_bg};
      r = composite_ray(set);
      weights.push_back({r.weights, std::vector<double>(samples->t().begin(), samples->t().end()), deltas.delta});
    }
    for (int c = 0; c < fdim; ++c) {
      rendered.at(0, static_cast<int>(i), c) = r.pixel_feature[c];
      target.at(0, static_cast<int>(i), c) = batch[i].target[c];
    }
    t_bg[i] = r.t_bg_transmittance;
  }
  const double recon = reconstruction_loss(rendered, target);
  // Rays without foreground samples contribute a zero density term but
  // still count in the mean.
  double l_fg = foreground_density_loss(weights);
  if (!batch.empty()) l_fg *= static_cast<double>(weights.size()) / static_cast<double>(batch.size());
  const double l_bg = background_transmittance_loss(t_bg);
  return total_loss(recon, l_fg, l_bg, lw.lambda_fg, lw.lambda_bg);
}

struct RecordedRayTerms {
  ad::Var loss;
  double recon = 0.0;  // squared error summed over channels
  double l_fg = 0.0;
  double l_bg = 0.0;
};

/// Loss terms of one ray from its recorded field outputs (`sigma` empty when
/// the ray has no foreground interval), already divided by the batch size.
inline RecordedRayTerms record_ray_terms(ad::Tape& tape, std::span<const ad::Var> sigma,
                                         const std::vector<std::vector<ad::Var>>& features,
                                         const std::vector<ad::Var>& bg, const SampleDistances* samples,
                                         const Deltas* deltas, double t_bg, std::span<const double> target,
                                         LossWeights lw, std::size_t batch_size) {
  const double inv_rays = 1.0 / static_cast<double>(batch_size);
  const double inv_values = inv_rays / static_cast<double>(bg.size());
  RecordedRayTerms out;
  std::vector<ad::Var> pixel;
  ad::Var transmittance{};
  std::optional<ad::Var> density_term;
  if (sigma.empty()) {
    pixel = bg;
    transmittance = tape.constant(1.0);
  } else {
    auto c = composite<ad::Var>(sigma, deltas->delta, samples->t(), features, std::span<const ad::Var>(bg), t_bg,
                                [&tape](double v) { return tape.constant(v); });
    pixel = std::move(c.pixel);
    transmittance = c.t_bg_transmittance;
    density_term = foreground_density_term_sorted<ad::Var>(c.weights, samples->t(), deltas->delta);
  }
  std::optional<ad::Var> sq;
  for (std::size_t ch = 0; ch < pixel.size(); ++ch) {
    const ad::Var diff = pixel[ch] - target[ch];
    sq = sq ? *sq + diff * diff : diff * diff;
  }
  out.recon = sq->value();
  ad::Var loss = *sq * inv_values;
  const ad::Var bin = binarization_term(transmittance);
  out.l_bg = bin.value();
  if (lw.lambda_bg != 0.0) loss = loss + bin * (lw.lambda_bg * inv_rays);
  if (density_term) {
    out.l_fg = density_term->value();
    if (lw.lambda_fg != 0.0) loss = loss + *density_term * (lw.lambda_fg * inv_rays);
  }
  out.loss = loss;
  return out;
}

/// Records one ray's contribution to the batch loss, field networks
/// included, on `tape` (whose parameters are the scene's flat vector).
inline RecordedRayTerms record_ray_loss(ad::Tape& tape, const SceneParameters& p, const SupervisedRay& sr,
                                        const SamplingConfig& cfg, LossWeights lw, std::uint64_t ray_index,
                                        std::size_t batch_size) {
  const RayGeometry g = ray_geometry(sr.ray, p.sphere_radius, cfg);
  const std::vector<ad::Var> bg = record_background(tape, p, g.s_bg);
  Rng rng = ray_rng(cfg, ray_index);
  const auto samples = plan_samples(p, sr.ray, g, cfg, rng);
  std::vector<ad::Var> sigma;
  std::vector<std::vector<ad::Var>> features;
  std::optional<Deltas> deltas;
  if (samples) {
    std::vector<double> enc_dir;
    if (p.foreground.spec.direction_levels > 0) {
      enc_dir.resize(static_cast<std::size_t>(p.foreground.spec.encoded_direction_dim()));
      encode_direction(p.foreground.spec.direction_levels, sr.ray.direction(), enc_dir);
    }
    sigma.reserve(samples->size());
    features.reserve(samples->size());
    for (double t : samples->t()) {
      RecordedSample s = record_foreground(tape, p, sr.ray.at(t), enc_dir);
      sigma.push_back(s.density);
      features.push_back(std::move(s.feature));
    }
    deltas = compute_deltas(*samples, g.hit.t_bg);
  }
  return record_ray_terms(tape, sigma, features, bg, samples ? &*samples : nullptr, deltas ? &*deltas : nullptr,
                          g.hit.t_bg, sr.target, lw, batch_size);
}

struct BatchGradient {
  LossBreakdown loss;
  ad::GradientVector gradient;
};

/// Rays per tape-accumulation chunk. Chunks are reduced in index order, so
/// the gradient is bitwise independent of the thread count.
inline constexpr std::size_t kGradientChunk = 32;

/// Recorded route: loss breakdown and d(total)/d(params) for the batch.
inline BatchGradient batch_loss_gradient(const SceneParameters& p, std::span<const SupervisedRay> batch,
                                         const SamplingConfig& cfg, LossWeights lw) {
  const std::size_t chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
  struct ChunkResult {
    std::vector<double> grad;
    double recon = 0.0, l_fg = 0.0, l_bg = 0.0;
  };
  std::vector<ChunkResult> results(chunks);
  detail::parallel_for(chunks, [&](std::size_t ci) {
    ChunkResult& r = results[ci];
    r.grad.assign(p.size(), 0.0);
    ad::Tape tape(p.flat);
    std::vector<double> adjoint;
    const std::size_t hi = std::min(batch.size(), (ci + 1) * kGradientChunk);
    for (std::size_t i = ci * kGradientChunk; i < hi; ++i) {
      tape.clear();
      const auto terms = record_ray_loss(tape, p, batch[i], cfg, lw, i, batch.size());
      ad::backward_into(tape, terms.loss, r.grad, adjoint);
      r.recon += terms.recon;
      r.l_fg += terms.l_fg;
      r.l_bg += terms.l_bg;
    }
  });
  BatchGradient out;
  out.gradient = ad::GradientVector(p.size());
  double recon = 0.0, l_fg = 0.0, l_bg = 0.0;
  for (const auto& r : results) {
    for (std::size_t k = 0; k < r.grad.size(); ++k) out.gradient[k] += r.grad[k];
    recon += r.recon;
    l_fg += r.l_fg;
    l_bg += r.l_bg;
  }
  const double n = std::max<double>(1.0, static_cast<double>(batch.size()));
  const int fdim = p.feature_dim();
  out.loss = total_loss(recon / (n * fdim), l_fg / n, l_bg / n, lw.lambda_fg, lw.lambda_bg);
  return out;
}

/// Buffers reused across calls of batch_loss_gradient_batched.
struct BatchWorkspace {
  Eigen::MatrixXd enc, dirs, enc_bg;
  MlpCache fg, bg;
  std::vector<Eigen::MatrixXd> fg_adj, bg_adj;
};

/// Batched route: the field networks run as matrix products over every
/// sample in the batch, and each ray's rendering and losses are recorded on
/// a small tape whose leaves are that ray's field outputs. The leaf adjoints
/// then seed one batched backward pass per network. Same value and
/// gradient as batch_loss_gradient up to summation order.
inline BatchGradient batch_loss_gradient_batched(const SceneParameters& p, std::span<const SupervisedRay> batch,
                                                 const SamplingConfig& cfg, LossWeights lw,
                                                 BatchWorkspace* workspace = nullptr) {
  BatchWorkspace local;
  BatchWorkspace& ws = workspace ? *workspace : local;
  const std::size_t n = batch.size();
  const std::size_t fdim = static_cast<std::size_t>(p.feature_dim());
  const auto& fs = p.foreground.spec;
  std::vector<RayGeometry> geo(n);
  std::vector<std::optional<SampleDistances>> samples(n);
  detail::parallel_for(n, [&](std::size_t i) {
    geo[i] = ray_geometry(batch[i].ray, p.sphere_radius, cfg);
    Rng rng = ray_rng(cfg, i);
    samples[i] = plan_samples(p, batch[i].ray, geo[i], cfg, rng);
  });
  std::vector<Eigen::Index> first(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i)
    first[i + 1] = first[i] + static_cast<Eigen::Index>(samples[i] ? samples[i]->size() : 0);
  const Eigen::Index m = first[n];

  Eigen::MatrixXd& enc = ws.enc;
  Eigen::MatrixXd& dirs = ws.dirs;
  Eigen::MatrixXd& enc_bg = ws.enc_bg;
  enc.resize(fs.encoded_input_dim(), m);
  dirs.resize(fs.encoded_direction_dim(), fs.direction_levels > 0 ? m : 0);
  enc_bg.resize(p.background.spec.encoded_input_dim(), static_cast<Eigen::Index>(n));
  detail::parallel_for(n, [&](std::size_t i) {
    const Ray& ray = batch[i].ray;
    encode_background_point(geo[i].s_bg, p.background.spec.input_levels,
                            std::span<double>(enc_bg.col(static_cast<Eigen::Index>(i)).data(), enc_bg.rows()));
    if (!samples[i]) return;
    for (std::size_t k = 0; k < samples[i]->size(); ++k) {
      const Eigen::Index col = first[i] + static_cast<Eigen::Index>(k);
      const Vec3 x = ray.at((*samples[i])[k]);
      require(x.norm() < p.sphere_radius, ErrorCode::OutOfBounds, "foreground point lies outside the sphere");
      encode_foreground_position(p, x, std::span<double>(enc.col(col).data(), enc.rows()));
      if (fs.direction_levels > 0)
        encode_direction(fs.direction_levels, ray.direction(), std::span<double>(dirs.col(col).data(), dirs.rows()));
    }
  });
  MlpCache& fg = ws.fg;
  MlpCache& bgc = ws.bg;
  mlp_forward_cached(p.flat, p.foreground, enc, fs.direction_levels > 0 ? &dirs : nullptr, fg);
  mlp_forward_cached(p.flat, p.background, enc_bg, nullptr, bgc);
  const std::size_t dh = p.foreground.head_index("density");
  const std::size_t fh = p.foreground.head_index("feature");
  const std::size_t bh = p.background.head_index("feature");
  const Eigen::MatrixXd& raw = fg.head_out[dh];
  const Eigen::MatrixXd& feat = fg.head_out[fh];
  const Eigen::MatrixXd& bgf = bgc.head_out[bh];

  std::vector<Eigen::MatrixXd>& fg_adj = ws.fg_adj;
  std::vector<Eigen::MatrixXd>& bg_adj = ws.bg_adj;
  fg_adj.resize(p.foreground.heads.size());
  for (std::size_t i = 0; i < fg_adj.size(); ++i) fg_adj[i].setZero(fg.head_out[i].rows(), m);
  bg_adj.resize(p.background.heads.size());
  for (std::size_t i = 0; i < bg_adj.size(); ++i) bg_adj[i].setZero(bgc.head_out[i].rows(), static_cast<Eigen::Index>(n));
  struct Terms {
    double recon = 0.0, l_fg = 0.0, l_bg = 0.0;
  };
  std::vector<Terms> terms(n);

  detail::parallel_for(n, [&](std::size_t i) {
    const Eigen::Index c0 = first[i];
    const std::size_t ns = static_cast<std::size_t>(first[i + 1] - c0);
    const Eigen::Index ci = static_cast<Eigen::Index>(i);
    // Leaves: densities, then features sample by sample, then the background.
    std::vector<double> leaf(ns + ns * fdim + fdim);
    for (std::size_t k = 0; k < ns; ++k) {
      leaf[k] = ad::detail::softplus(raw(0, c0 + static_cast<Eigen::Index>(k)));
      for (std::size_t c = 0; c < fdim; ++c)
        leaf[ns + k * fdim + c] = feat(static_cast<Eigen::Index>(c), c0 + static_cast<Eigen::Index>(k));
    }
    for (std::size_t c = 0; c < fdim; ++c) leaf[ns + ns * fdim + c] = bgf(static_cast<Eigen::Index>(c), ci);
    ad::Tape tape(leaf);
    std::vector<ad::Var> sigma(ns);
    std::vector<std::vector<ad::Var>> features(ns, std::vector<ad::Var>(fdim));
    std::vector<ad::Var> bg(fdim);
    for (std::size_t k = 0; k < ns; ++k) {
      sigma[k] = tape.parameter(k);
      for (std::size_t c = 0; c < fdim; ++c) features[k][c] = tape.parameter(ns + k * fdim + c);
    }
    for (std::size_t c = 0; c < fdim; ++c) bg[c] = tape.parameter(ns + ns * fdim + c);
    std::optional<Deltas> deltas;
    if (samples[i]) deltas = compute_deltas(*samples[i], geo[i].hit.t_bg);
    const auto t = record_ray_terms(tape, sigma, features, bg, samples[i] ? &*samples[i] : nullptr,
                                    deltas ? &*deltas : nullptr, geo[i].hit.t_bg, batch[i].target, lw, n);
    std::vector<double> g(leaf.size(), 0.0), adjoint;
    ad::backward_into(tape, t.loss, g, adjoint);
    for (std::size_t k = 0; k < ns; ++k) {
      const Eigen::Index col = c0 + static_cast<Eigen::Index>(k);
      fg_adj[dh](0, col) = g[k] * ad::detail::sigmoid(raw(0, col));
      for (std::size_t c = 0; c < fdim; ++c) fg_adj[fh](static_cast<Eigen::Index>(c), col) = g[ns + k * fdim + c];
    }
    for (std::size_t c = 0; c < fdim; ++c) bg_adj[bh](static_cast<Eigen::Index>(c), ci) = g[ns + ns * fdim + c];
    terms[i] = {t.recon, t.l_fg, t.l_bg};
  });

  BatchGradient out;
  out.gradient = ad::GradientVector(p.size());
  mlp_backward(p.flat, p.foreground, fg, fg_adj, out.gradient.values);
  mlp_backward(p.flat, p.background, bgc, bg_adj, out.gradient.values);
  double recon = 0.0, l_fg = 0.0, l_bg = 0.0;
  for (const auto& t : terms) {
    recon += t.recon;
    l_fg += t.l_fg;
    l_bg += t.l_bg;
  }
  const double nn = std::max<double>(1.0, static_cast<double>(n));
  out.loss = total_loss(recon / (nn * static_cast<double>(fdim)), l_fg / nn, l_bg / nn, lw.lambda_fg, lw.lambda_bg);
  return out;
}

}  // namespace spherebg
