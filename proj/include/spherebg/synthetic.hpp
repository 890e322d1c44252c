#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spherebg/error.hpp"
#include "spherebg/geometry.hpp"
#include "spherebg/image.hpp"
#include "spherebg/random.hpp"

// Synthetic multi-view scenes rendered by a standalone analytic ray tracer:
// flat-albedo spheres and axis-aligned boxes in front of a smooth texture on
// the background sphere.

namespace spherebg {

struct Primitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.5);  // sphere: size.x() is the radius; box: half extents
  Vec3 albedo = Vec3::Constant(0.5);

  static Primitive sphere(const Vec3& c, double r, const Vec3& albedo) { return {Kind::Sphere, c, Vec3(r, r, r), albedo}; }
  static Primitive box(const Vec3& c, const Vec3& half, const Vec3& albedo) { return {Kind::Box, c, half, albedo}; }

  /// Smallest and largest distance of the primitive's points from the origin.
  std::array<double, 2> radial_extent() const {
    if (kind == Kind::Sphere) {
      const double d = center.norm();
      return {std::max(0.0, d - size.x()), d + size.x()};
    }
    const Vec3 lo = center - size, hi = center + size;
    const Vec3 nearest = Vec3::Zero().cwiseMax(lo).cwiseMin(hi);
    const Vec3 farthest = lo.cwiseAbs().cwiseMax(hi.cwiseAbs());
    return {nearest.norm(), farthest.norm()};
  }

  /// Entry distance of the ray into the primitive, if it is hit in front of
  /// the origin.
  std::optional<double> intersect(const Ray& ray) const {
    const Vec3& o = ray.origin();
    const Vec3& d = ray.direction();
    if (kind == Kind::Sphere) {
      const Vec3 oc = o - center;
      const double b = oc.dot(d);
      const double c = oc.squaredNorm() - size.x() * size.x();
      const double disc = b * b - c;
      if (disc < 0.0) return std::nullopt;
      const double s = std::sqrt(disc);
      const double t0 = -b - s, t1 = -b + s;
      if (t0 > 0.0) return t0;
      if (t1 > 0.0) return t1;
      return std::nullopt;
    }
    double t_enter = -std::numeric_limits<double>::infinity();
    double t_exit = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      const double lo = center[a] - size[a], hi = center[a] + size[a];
      if (d[a] == 0.0) {
        if (o[a] < lo || o[a] > hi) return std::nullopt;
        continue;
      }
      double t0 = (lo - o[a]) / d[a], t1 = (hi - o[a]) / d[a];
      if (t0 > t1) std::swap(t0, t1);
      t_enter = std::max(t_enter, t0);
      t_exit = std::min(t_exit, t1);
    }
    if (t_enter > t_exit || t_exit <= 0.0) return std::nullopt;
    return t_enter > 0.0 ? t_enter : t_exit;
  }
};

/// Per channel: base + amplitude * sin(k_theta * theta + phase) * cos(m_phi * phi + phase).
/// m_phi is an integer, so the texture is continuous across the phi seam.
struct BackgroundTexture {
  std::array<double, 3> base{0.5, 0.5, 0.5};
  std::array<double, 3> amplitude{0.25, 0.2, 0.2};
  std::array<double, 3> k_theta{2.0, 3.0, 1.0};
  std::array<int, 3> m_phi{2, 1, 3};
  std::array<double, 3> phase{0.3, 1.1, 2.0};

  Vec3 color(const SphericalPoint& s) const {
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch)
      c[ch] = base[ch] + amplitude[ch] * std::sin(k_theta[ch] * s.theta + phase[ch]) *
                             std::cos(m_phi[ch] * s.phi + phase[ch]);
    return c.cwiseMax(0.0).cwiseMin(1.0);
  }
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  BackgroundTexture texture;
  double sphere_radius = 3.0;
};

/// Three primitives around the origin used by the reproduction experiment.
inline SceneSpec default_scene() {
  SceneSpec s;
  s.primitives = {
      Primitive::sphere(Vec3(0.3, -0.25, 0.05), 0.42, Vec3(0.85, 0.3, 0.2)),
      Primitive::box(Vec3(-0.35, 0.3, -0.1), Vec3(0.28, 0.24, 0.34), Vec3(0.2, 0.55, 0.85)),
      Primitive::sphere(Vec3(-0.05, 0.05, 0.58), 0.22, Vec3(0.9, 0.85, 0.3)),
  };
  return s;
}

struct TraceResult {
  Vec3 rgb;
  double alpha = 0.0;
  double depth = 0.0;
};

inline TraceResult trace_ray(const SceneSpec& scene, const Ray& ray) {
  double best = std::numeric_limits<double>::infinity();
  const Primitive* hit = nullptr;
  for (const auto& p : scene.primitives)
    if (auto t = p.intersect(ray); t && *t < best) {
      best = *t;
      hit = &p;
    }
  const SphereHit bg = ray_sphere_intersection(ray, scene.sphere_radius);
  if (hit && best < bg.t_bg) return {hit->albedo, 1.0, best};
  return {scene.texture.color(cartesian_to_spherical(bg.point)), 0.0, bg.t_bg};
}

struct View {
  Camera camera;
  Image rgb;    // H x W x 3, linear
  Image alpha;  // H x W x 1
  Image depth;  // H x W x 1
};

struct SsoDataset {
  std::vector<View> views;
  std::vector<int> train;
  std::vector<int> heldout;

  int width() const { return views.empty() ? 0 : views.front().camera.width(); }
  int height() const { return views.empty() ? 0 : views.front().camera.height(); }

  void validate() const {
    require(views.size() >= 2, ErrorCode::InvariantViolation, "dataset needs at least two views");
    for (const auto& v : views) {
      require(v.camera.width() == width() && v.camera.height() == height(), ErrorCode::ShapeMismatch,
              "all dataset views must share image dimensions");
      require(v.rgb.width == width() && v.rgb.height == height() && v.rgb.channels == 3, ErrorCode::ShapeMismatch,
              "view rgb image does not match its camera");
      require(v.alpha.same_shape(Image(width(), height(), 1)) && v.depth.same_shape(Image(width(), height(), 1)),
              ErrorCode::ShapeMismatch, "view alpha/depth maps do not match its camera");
    }
    require(!train.empty(), ErrorCode::InvariantViolation, "dataset has no training views");
    for (const auto* split : {&train, &heldout})
      for (int i : *split)
        require(i >= 0 && i < static_cast<int>(views.size()), ErrorCode::OutOfRange, "split index out of range");
  }
};

struct SynthOptions {
  int n_views = 10;
  int width = 64;
  int height = 64;
  double orbit_radius = 2.0;
  double focal_scale = 0.6;  // focal length in units of the image width
  double near = 0.5;
  double far = 3.5;
  std::uint64_t seed = 0;
};

/// Held-out views are interleaved: one per block of n / count views,
/// in the middle of the block (views 2 and 7 for ten views).
inline std::vector<int> heldout_indices(int n_views) {
  const int count = std::max(1, n_views / 5);
  const int block = n_views / count;
  std::vector<int> out;
  for (int k = 0; k < count; ++k) out.push_back(k * block + block / 2);
  return out;
}

/// Camera poses on the orbit: evenly spaced azimuths, alternating
/// elevations, both jittered by the seed.
inline std::vector<Camera> orbit_cameras(const SynthOptions& o) {
  Rng rng(mix_seed(o.seed, 0x6f72626974ULL));
  std::vector<Camera> cams;
  for (int k = 0; k < o.n_views; ++k) {
    const double az = 2.0 * kPi * k / o.n_views + rng.uniform(-0.1, 0.1);
    const double el = (k % 2 == 0 ? 0.35 : -0.12) + rng.uniform(-0.06, 0.06);
    const Vec3 pos = o.orbit_radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(Camera::look_at(pos, Vec3::Zero(), Vec3::UnitZ(), o.focal_scale * o.width, o.width, o.height));
  }
  return cams;
}

inline void check_scene(const SceneSpec& scene, const SynthOptions& o) {
  require(o.n_views >= 2, ErrorCode::InvalidArgument, "need at least two views");
  require(o.orbit_radius > 0.0 && o.orbit_radius < scene.sphere_radius, ErrorCode::DegenerateScene,
          "camera orbit must lie strictly inside the background sphere");
  for (const auto& p : scene.primitives) {
    const auto [lo, hi] = p.radial_extent();
    require(!(lo <= o.orbit_radius && o.orbit_radius <= hi), ErrorCode::DegenerateScene,
            "a primitive intersects the camera orbit");
    require(hi <= std::min(o.orbit_radius - o.near, o.far - o.orbit_radius), ErrorCode::DegenerateScene,
            "a primitive does not fit inside the near/far shell of the orbit");
  }
}

inline View render_view(const SceneSpec& scene, const Camera& cam) {
  View v{cam, Image(cam.width(), cam.height(), 3), Image(cam.width(), cam.height(), 1),
         Image(cam.width(), cam.height(), 1)};
  for (int r = 0; r < cam.height(); ++r)
    for (int c = 0; c < cam.width(); ++c) {
      const TraceResult t = trace_ray(scene, pixel_ray(cam, r, c));
      for (int ch = 0; ch < 3; ++ch) v.rgb.at(r, c, ch) = t.rgb[ch];
      v.alpha.at(r, c) = t.alpha;
      v.depth.at(r, c) = t.depth;
    }
  return v;
}

inline SsoDataset generate_synthetic_scene(const SceneSpec& scene, const SynthOptions& o) {
  check_scene(scene, o);
  SsoDataset d;
  for (const Camera& cam : orbit_cameras(o)) d.views.push_back(render_view(scene, cam));
  d.heldout = heldout_indices(o.n_views);
  for (int k = 0; k < o.n_views; ++k)
    if (std::find(d.heldout.begin(), d.heldout.end(), k) == d.heldout.end()) d.train.push_back(k);
  return d;
}

// Scene JSON: {sphere_radius, primitives:[{kind:"sphere"|"box", center, radius | half_extents, albedo}],
// texture:{base, amplitude, k_theta, m_phi, phase}}; every key is optional.

inline nlohmann::json scene_to_json(const SceneSpec& s) {
  auto vec = [](const Vec3& v) { return nlohmann::json{v.x(), v.y(), v.z()}; };
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : s.primitives) {
    nlohmann::json j{{"kind", p.kind == Primitive::Kind::Sphere ? "sphere" : "box"},
                     {"center", vec(p.center)},
                     {"albedo", vec(p.albedo)}};
    if (p.kind == Primitive::Kind::Sphere)
      j["radius"] = p.size.x();
    else
      j["half_extents"] = vec(p.size);
    prims.push_back(j);
  }
  return {{"sphere_radius", s.sphere_radius},
          {"primitives", prims},
          {"texture",
           {{"base", s.texture.base},
            {"amplitude", s.texture.amplitude},
            {"k_theta", s.texture.k_theta},
            {"m_phi", s.texture.m_phi},
            {"phase", s.texture.phase}}}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
  try {
    SceneSpec s;
    s.sphere_radius = j.value("sphere_radius", s.sphere_radius);
    if (j.contains("primitives")) {
      s.primitives.clear();
      for (const auto& pj : j.at("primitives")) {
        const std::string kind = pj.at("kind").get<std::string>();
        Primitive p;
        p.center = vec(pj.at("center"));
        p.albedo = pj.contains("albedo") ? vec(pj.at("albedo")) : Vec3::Constant(0.5);
        if (kind == "sphere") {
          p = Primitive::sphere(p.center, pj.at("radius").get<double>(), p.albedo);
        } else if (kind == "box") {
          p = Primitive::box(p.center, vec(pj.at("half_extents")), p.albedo);
        } else {
          fail(ErrorCode::ParseError, "scene json: unknown primitive kind '" + kind + "'");
        }
        s.primitives.push_back(p);
      }
    }
    if (j.contains("texture")) {
      const auto& t = j.at("texture");
      if (t.contains("base")) s.texture.base = t.at("base").get<std::array<double, 3>>();
      if (t.contains("amplitude")) s.texture.amplitude = t.at("amplitude").get<std::array<double, 3>>();
      if (t.contains("k_theta")) s.texture.k_theta = t.at("k_theta").get<std::array<double, 3>>();
      if (t.contains("m_phi")) s.texture.m_phi = t.at("m_phi").get<std::array<int, 3>>();
      if (t.contains("phase")) s.texture.phase = t.at("phase").get<std::array<double, 3>>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("scene json: ") + e.what());
  }
}

}  // namespace spherebg
