#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "spherebg/random.hpp"
#include "spherebg/renderer.hpp"

using namespace spherebg;

namespace {

RaySampleSet make_set(std::vector<double> t, std::vector<double> sigma, std::vector<std::vector<double>> feat,
                      std::vector<double> bg, double t_bg) {
  SampleDistances d(t, t.front() * 0.5, t_bg);
  Deltas deltas = compute_deltas(d, t_bg);
  Eigen::MatrixXd f(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(bg.size()));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t c = 0; c < bg.size(); ++c) f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = feat[i][c];
  return RaySampleSet{std::move(d), std::move(deltas), std::move(sigma), f, std::move(bg), t_bg};
}

RaySampleSet random_set(Rng& rng, std::size_t n, int fdim) {
  std::vector<double> t(n), sigma(n);
  std::vector<std::vector<double>> feat(n, std::vector<double>(fdim));
  double acc = rng.uniform(0.5, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = acc;
    acc += rng.uniform(0.01, 0.6);
    sigma[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.0, 8.0);
    for (double& v : feat[i]) v = rng.uniform();
  }
  std::vector<double> bg(fdim);
  for (double& v : bg) v = rng.uniform();
  return make_set(t, sigma, feat, bg, acc + rng.uniform(0.0, 0.5));
}

SceneParameters tiny_scene(std::uint64_t seed) {
  return init_parameters(foreground_spec({16, 16}, 4, 2, 3), background_spec(3, 4, {16, 16}), seed, 3.0);
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST(CompositeRay, EmptyForegroundIsPureBackground) {
  const auto r = composite_ray(make_set({1.0, 1.5, 2.0}, {0, 0, 0}, {{0.3}, {0.4}, {0.5}}, {0.7}, 3.0));
  EXPECT_EQ(r.t_bg_transmittance, 1.0);
  EXPECT_EQ(r.pixel_feature[0], 0.7);
  EXPECT_EQ(r.alpha, 0.0);
  EXPECT_EQ(r.expected_depth, 3.0);
}

TEST(CompositeRay, WorkedTwoSampleExample) {
  // t = [1, 1.5], t_bg = 2 gives deltas [0.5, 0.5].
  const auto r = composite_ray(make_set({1.0, 1.5}, {1.0, 2.0}, {{1.0}, {2.0}}, {10.0}, 2.0));
  // Hand evaluation: w1 = 1 - e^-0.5, w2 = e^-0.5 (1 - e^-1), T = e^-1.5.
  const double w1 = 1.0 - std::exp(-0.5);
  const double w2 = std::exp(-0.5) * (1.0 - std::exp(-1.0));
  const double tb = std::exp(-1.5);
  EXPECT_NEAR(r.weights[0], w1, 1e-15);
  EXPECT_NEAR(r.weights[1], w2, 1e-15);
  EXPECT_NEAR(r.weights[0], 0.393469, 5e-7);
  // The exact value 0.3834005 sits on a rounding boundary at six decimals.
  EXPECT_NEAR(r.weights[1], 0.383401, 1e-6);
  EXPECT_NEAR(r.t_bg_transmittance, 0.223130, 5e-7);
  EXPECT_NEAR(r.pixel_feature[0], w1 + 2 * w2 + 10 * tb, 1e-14);
  // The published figure 3.391573 sums the rounded terms; the exact value
  // is 3.3915719.
  EXPECT_NEAR(r.pixel_feature[0], 3.391572, 1e-6);
  EXPECT_NEAR(r.pixel_feature[0], 3.391573, 2e-6);
  EXPECT_EQ(r.alpha, 1.0 - r.t_bg_transmittance);
}

TEST(CompositeRay, OpaqueLimit) {
  const auto r = composite_ray(make_set({1.0}, {50.0}, {{0.25, 0.5}}, {1.0, 1.0}, 2.0));
  EXPECT_LT(r.t_bg_transmittance, 1e-20);
  EXPECT_NEAR(r.pixel_feature[0], 0.25, 1e-15);
  EXPECT_NEAR(r.alpha, 1.0, 1e-15);
}

TEST(CompositeRay, NonFiniteInputRejected) {
  auto s = make_set({1.0, 2.0}, {1.0, std::nan("")}, {{0.1}, {0.2}}, {0.0}, 3.0);
  try {
    composite_ray(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteInput);
  }
  s.densities[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(composite_ray(s), Error);
}

TEST(CompositeRay, PartitionOfUnity) {
  Rng rng(1);
  for (int k = 0; k < 2000; ++k) {
    const auto r = composite_ray(random_set(rng, 1 + rng.below(40), 2));
    double sum = r.t_bg_transmittance;
    for (double w : r.weights) {
      ASSERT_GE(w, 0.0);
      sum += w;
    }
    ASSERT_LT(std::abs(sum - 1.0), 1e-9);
  }
}

TEST(CompositeRay, IncreasingDensityNeverRaisesTransmittance) {
  Rng rng(2);
  for (int k = 0; k < 500; ++k) {
    auto s = random_set(rng, 1 + rng.below(10), 1);
    const double before = composite_ray(s).t_bg_transmittance;
    s.densities[rng.below(s.densities.size())] += rng.uniform(0.0, 3.0);
    ASSERT_LE(composite_ray(s).t_bg_transmittance, before);
  }
}

TEST(CompositeRay, MatchesExtendedPrecisionTranscription) {
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const auto s = random_set(rng, 1 + rng.below(6), 3);
    const auto r = composite_ray(s);
    const std::size_t n = s.densities.size();
    for (std::size_t c = 0; c < 3; ++c) {
      long double pix = 0.0L, od_total = 0.0L;
      for (std::size_t i = 0; i < n; ++i) {
        long double od = 0.0L;
        for (std::size_t j = 0; j < i; ++j) od += static_cast<long double>(s.densities[j]) * s.deltas.delta[j];
        const long double T = std::exp(-od);
        const long double w = T * (1.0L - std::exp(-static_cast<long double>(s.densities[i]) * s.deltas.delta[i]));
        pix += w * s.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      }
      for (std::size_t j = 0; j < n; ++j) od_total += static_cast<long double>(s.densities[j]) * s.deltas.delta[j];
      pix += std::exp(-od_total) * s.bg_feature[c];
      ASSERT_NEAR(r.pixel_feature[c], static_cast<double>(pix), 1e-12);
    }
  }
}

TEST(CompositeRay, QuadratureErrorHalvesWithDoubledSamples) {
  // Density s on t > a, zero before; a lies on a bin edge for every count,
  // so the first lit sample sits half a bin past the step.
  const double near = 0.5, far = 2.5, a = 1.5, s = 1.3, t_bg = 2.5;
  const double exact = 1.0 - std::exp(-s * (t_bg - a));
  std::vector<double> errors;
  for (int n : {16, 32, 64, 128}) {
    const auto d = stratified_sample(near, far, n);
    std::vector<double> sigma(d.size());
    std::vector<std::vector<double>> feat(d.size(), {1.0});
    for (std::size_t i = 0; i < d.size(); ++i) sigma[i] = d[i] > a ? s : 0.0;
    RaySampleSet set{d, compute_deltas(d, t_bg), sigma, Eigen::MatrixXd::Ones(n, 1), {0.0}, t_bg};
    errors.push_back(std::abs(composite_ray(set).pixel_feature[0] - exact));
  }
  for (std::size_t k = 0; k + 1 < errors.size(); ++k) {
    const double ratio = errors[k] / errors[k + 1];
    EXPECT_GE(ratio, 1.7);
    EXPECT_LE(ratio, 2.3);
  }
}

TEST(Render, SamplesNeverReachTheSphere) {
  const auto p = tiny_scene(1);
  SamplingConfig cfg;
  cfg.deterministic = false;
  cfg.seed = 11;
  const Camera cam = Camera::look_at(Vec3(2, 0, 0.3), Vec3::Zero(), Vec3::UnitZ(), 10, 8, 8);
  std::uint64_t index = 0;
  for (const Ray& ray : generate_rays(cam)) {
    const auto g = ray_geometry(ray, p.sphere_radius, cfg);
    Rng rng = ray_rng(cfg, index++);
    const auto s = plan_samples(p, ray, g, cfg, rng);
    ASSERT_TRUE(s.has_value());
    EXPECT_LT(s->t().back(), g.hit.t_bg);
    EXPECT_LE(s->t().back(), cfg.far);
  }
}

TEST(Render, ZeroDensityFullEqualsBackgroundOnly) {
  auto p = tiny_scene(2);
  p.flat[p.foreground.head("density").bias_offset] = -60.0;
  const Camera cam = Camera::look_at(Vec3(0, -2, 0.2), Vec3::Zero(), Vec3::UnitZ(), 8, 6, 6);
  SamplingConfig cfg;
  const auto full = render(p, cam, RenderMode::Full, cfg);
  const auto bg = render(p, cam, RenderMode::BackgroundOnly, cfg);
  EXPECT_LT(max_abs_diff(full.image, bg.image), 1e-12);
  for (double a : bg.alpha_map.data) EXPECT_EQ(a, 0.0);
}

TEST(Render, ForegroundOverBackgroundEqualsFull) {
  auto p = tiny_scene(3);
  Rng rng(4);
  for (double& v : p.flat) v += rng.uniform(-0.5, 0.5);
  const Camera cam = Camera::look_at(Vec3(1.5, 1.0, 0.5), Vec3::Zero(), Vec3::UnitZ(), 8, 7, 5);
  SamplingConfig cfg;
  cfg.coarse_count = 16;
  cfg.fine_count = 16;
  const auto full = render(p, cam, RenderMode::Full, cfg);
  const auto fg = render(p, cam, RenderMode::ForegroundOnly, cfg);
  const auto bg = render(p, cam, RenderMode::BackgroundOnly, cfg);
  EXPECT_EQ(max_abs_diff(fg.alpha_map, full.alpha_map), 0.0);
  EXPECT_LT(max_abs_diff(composite_over(fg.image, fg.alpha_map, bg.image), full.image), 1e-6);
  for (double a : full.alpha_map.data) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  EXPECT_TRUE(full.depth_map.all_finite());
}

TEST(Render, ConstantDensityGivesConstantAlphaForEqualSpans) {
  const auto p = tiny_scene(5);
  // Centered camera: every ray has t_bg = R.
  const Camera cam(Vec3::Zero(), Mat3::Identity(), 6.0, 6, 6);
  const auto out = render(p, cam, RenderMode::Full, SamplingConfig{});
  for (double a : out.alpha_map.data) EXPECT_NEAR(a, out.alpha_map.data[0], 1e-12);
  EXPECT_GT(out.alpha_map.data[0], 0.5);
}

TEST(Render, DeterministicPerSeed) {
  auto p = tiny_scene(6);
  const Camera cam = Camera::look_at(Vec3(0, 2, 0), Vec3::Zero(), Vec3::UnitZ(), 6, 5, 5);
  SamplingConfig cfg;
  cfg.deterministic = false;
  cfg.seed = 77;
  const auto a = render(p, cam, RenderMode::Full, cfg);
  const auto b = render(p, cam, RenderMode::Full, cfg);
  EXPECT_EQ(a.image.data, b.image.data);
  cfg.seed = 78;
  EXPECT_NE(render(p, cam, RenderMode::Full, cfg).depth_map.data, a.depth_map.data);
}

TEST(Render, CameraOutsideSpherePropagates) {
  const auto p = tiny_scene(7);
  const Camera cam = Camera::look_at(Vec3(0, 4, 0), Vec3::Zero(), Vec3::UnitZ(), 6, 2, 2);
  try {
    render(p, cam, RenderMode::Full, SamplingConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CameraOutsideSphere);
  }
}

TEST(CompositeOver, TrivialAlphas) {
  Image fg(3, 2, 3, 0.4), bg(3, 2, 3, 0.9);
  EXPECT_EQ(composite_over(fg, Image(3, 2, 1, 1.0), bg).data, fg.data);
  EXPECT_EQ(composite_over(Image(3, 2, 3, 0.0), Image(3, 2, 1, 0.0), bg).data, bg.data);
  try {
    composite_over(fg, Image(3, 2, 1, 0.5), Image(2, 3, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  EXPECT_THROW(composite_over(fg, Image(3, 2, 1, 1.5), bg), Error);
}
