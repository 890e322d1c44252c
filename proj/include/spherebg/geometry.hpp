#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "spherebg/error.hpp"

namespace spherebg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

struct Pixel {
  int row = 0;
  int col = 0;
};

/// Pinhole camera. Camera space is x right, y down (image rows), z forward;
/// `rotation` maps camera-space directions to world space.
class Camera {
 public:
  Camera() = default;

  Camera(Vec3 position, Mat3 rotation, double focal_length, int width, int height)
      : Camera(position, rotation, focal_length, {0.5 * width, 0.5 * height}, width, height) {}

  Camera(Vec3 position, Mat3 rotation, double focal_length, std::array<double, 2> principal_point,
         int width, int height)
      : position_(position),
        rotation_(rotation),
        focal_(focal_length),
        principal_(principal_point),
        width_(width),
        height_(height) {
    require(width >= 1 && height >= 1, ErrorCode::InvariantViolation, "camera image dims must be >= 1");
    require(focal_length > 0.0 && std::isfinite(focal_length), ErrorCode::InvariantViolation,
            "camera focal length must be positive");
    require(position.allFinite(), ErrorCode::InvariantViolation, "camera position must be finite");
    const double ortho_err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    require(ortho_err <= 1e-6, ErrorCode::InvariantViolation, "camera rotation is not orthonormal");
  }

  /// Camera at `position` looking at `target`, with `up` pointing towards the
  /// top of the image.
  static Camera look_at(const Vec3& position, const Vec3& target, const Vec3& up, double focal_length,
                        int width, int height) {
    const Vec3 forward = (target - position).normalized();
    Vec3 right = forward.cross(up);
    require(right.norm() > 1e-12, ErrorCode::InvalidArgument, "look_at: up is parallel to view direction");
    right.normalize();
    const Vec3 down = forward.cross(right);
    Mat3 rot;
    rot.col(0) = right;
    rot.col(1) = down;
    rot.col(2) = forward;
    return Camera(position, rot, focal_length, width, height);
  }

  const Vec3& position() const { return position_; }
  const Mat3& rotation() const { return rotation_; }
  double focal_length() const { return focal_; }
  const std::array<double, 2>& principal_point() const { return principal_; }
  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

 private:
  Vec3 position_ = Vec3::Zero();
  Mat3 rotation_ = Mat3::Identity();
  double focal_ = 1.0;
  std::array<double, 2> principal_{0.5, 0.5};
  int width_ = 1;
  int height_ = 1;
};

class Ray {
 public:
  Ray(const Vec3& origin, const Vec3& direction, Pixel pixel = {}) : origin_(origin), pixel_(pixel) {
    const double n = direction.norm();
    require(n > 0.0 && std::isfinite(n), ErrorCode::ZeroVector, "ray direction must be non-zero");
    direction_ = direction / n;
  }

  const Vec3& origin() const { return origin_; }
  const Vec3& direction() const { return direction_; }
  Pixel pixel() const { return pixel_; }
  Vec3 at(double t) const { return origin_ + t * direction_; }

 private:
  Vec3 origin_;
  Vec3 direction_;
  Pixel pixel_;
};

/// Polar angle from +z in [0, pi], azimuth from +x in [-pi, pi).
struct SphericalPoint {
  double theta = 0.0;
  double phi = 0.0;
};

/// Ray through the center of pixel (row, col).
inline Ray pixel_ray(const Camera& camera, int row, int col) {
  const auto& pp = camera.principal_point();
  const Vec3 dir_cam((col + 0.5 - pp[0]) / camera.focal_length(), (row + 0.5 - pp[1]) / camera.focal_length(),
                     1.0);
  return Ray(camera.position(), camera.rotation() * dir_cam, Pixel{row, col});
}

/// One ray per pixel, row-major.
inline std::vector<Ray> generate_rays(const Camera& camera) {
  std::vector<Ray> rays;
  rays.reserve(camera.pixel_count());
  for (int r = 0; r < camera.height(); ++r)
    for (int c = 0; c < camera.width(); ++c) rays.push_back(pixel_ray(camera, r, c));
  return rays;
}

struct SphereHit {
  Vec3 point;
  double t_bg = 0.0;
};

/// Exit point of a ray that starts strictly inside the sphere of `radius`
/// centered at the origin.
inline SphereHit ray_sphere_intersection(const Ray& ray, double radius) {
  require(radius > 0.0, ErrorCode::InvalidArgument, "sphere radius must be positive");
  const Vec3& o = ray.origin();
  const Vec3& d = ray.direction();
  const double c = o.squaredNorm() - radius * radius;
  require(c < 0.0, ErrorCode::CameraOutsideSphere,
          "ray origin norm " + std::to_string(o.norm()) + " is not inside sphere radius " + std::to_string(radius));
  const double b = d.dot(o);
  // Roots of t^2 + 2 b t + c = 0 with c < 0: one negative, one positive.
  // The positive root is computed in the cancellation-free form.
  const double disc = std::sqrt(b * b - c);
  const double t = b <= 0.0 ? disc - b : -c / (b + disc);
  return {o + t * d, t};
}

inline SphericalPoint cartesian_to_spherical(const Vec3& point) {
  const double n = point.norm();
  require(n > 0.0, ErrorCode::ZeroVector, "cannot convert the zero vector to spherical coordinates");
  SphericalPoint s;
  s.theta = std::acos(std::clamp(point.z() / n, -1.0, 1.0));
  if (s.theta == 0.0 || s.theta == kPi) {
    s.phi = 0.0;
  } else {
    s.phi = std::atan2(point.y(), point.x());
    if (s.phi >= kPi) s.phi -= 2.0 * kPi;
  }
  return s;
}

inline Vec3 spherical_to_cartesian(const SphericalPoint& s, double radius) {
  const double st = std::sin(s.theta);
  return radius * Vec3(st * std::cos(s.phi), st * std::sin(s.phi), std::cos(s.theta));
}

/// Maps (theta, phi) onto [-1, 1]^2 before encoding.
inline std::array<double, 2> normalized_angles(const SphericalPoint& s) {
  return {s.theta / kPi * 2.0 - 1.0, s.phi / kPi};
}

inline constexpr std::size_t encoded_size(std::size_t dims, int levels) {
  return 2 * dims * static_cast<std::size_t>(levels);
}

/// Sinusoidal encoding. Layout per input coordinate x_k, frequencies
/// ascending: sin(2^0 pi x_k), cos(2^0 pi x_k), ..., sin(2^(L-1) pi x_k),
/// cos(2^(L-1) pi x_k); coordinates follow one another.
inline void positional_encode_into(std::span<const double> input, int levels, std::span<double> out) {
  require(levels >= 1, ErrorCode::InvalidArgument, "positional encoding needs at least one level");
  require(out.size() == encoded_size(input.size(), levels), ErrorCode::ShapeMismatch,
          "positional encoding output has the wrong size");
  std::size_t o = 0;
  for (double x : input) {
    double freq = kPi;
    for (int l = 0; l < levels; ++l) {
      out[o++] = std::sin(freq * x);
      out[o++] = std::cos(freq * x);
      freq *= 2.0;
    }
  }
}

struct EncodedVector {
  std::vector<double> values;
};

inline EncodedVector positional_encode(std::span<const double> input, int levels) {
  require(levels >= 1, ErrorCode::InvalidArgument, "positional encoding needs at least one level");
  EncodedVector e;
  e.values.resize(encoded_size(input.size(), levels));
  positional_encode_into(input, levels, e.values);
  return e;
}

// Camera JSON: {position:[x,y,z], rotation:[[..],[..],[..]], focal:f, width:W, height:H}
// plus an optional principal_point:[cx,cy] (defaults to the image center).

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["position"] = {cam.position().x(), cam.position().y(), cam.position().z()};
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    rows.push_back({cam.rotation()(r, 0), cam.rotation()(r, 1), cam.rotation()(r, 2)});
  j["rotation"] = rows;
  j["focal"] = cam.focal_length();
  j["width"] = cam.width();
  j["height"] = cam.height();
  const auto& pp = cam.principal_point();
  if (pp[0] != 0.5 * cam.width() || pp[1] != 0.5 * cam.height()) j["principal_point"] = {pp[0], pp[1]};
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  try {
    Vec3 pos;
    Mat3 rot;
    for (int i = 0; i < 3; ++i) pos[i] = j.at("position").at(i).get<double>();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot(r, c) = j.at("rotation").at(r).at(c).get<double>();
    const double focal = j.at("focal").get<double>();
    const int w = j.at("width").get<int>();
    const int h = j.at("height").get<int>();
    std::array<double, 2> pp{0.5 * w, 0.5 * h};
    if (j.contains("principal_point")) {
      pp[0] = j["principal_point"].at(0).get<double>();
      pp[1] = j["principal_point"].at(1).get<double>();
    }
    return Camera(pos, rot, focal, pp, w, h);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("camera json: ") + e.what());
  }
}

}  // namespace spherebg
