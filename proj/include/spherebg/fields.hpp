#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spherebg/autodiff.hpp"
#include "spherebg/error.hpp"
#include "spherebg/geometry.hpp"
#include "spherebg/random.hpp"

namespace spherebg {

enum class Activation { Identity, Relu, Softplus, WidenedSigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::WidenedSigmoid: return "widened_sigmoid";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "softplus") return Activation::Softplus;
  if (s == "widened_sigmoid") return Activation::WidenedSigmoid;
  fail(ErrorCode::ParseError, "unknown activation '" + s + "'");
}

/// Margin of the widened sigmoid y = (1 + 2 eps) sigmoid(x) - eps.
inline constexpr double kSigmoidMargin = 0.001;

struct HeadSpec {
  std::string name;
  int width = 1;
  Activation activation = Activation::Identity;
  bool uses_direction = false;
};

/// Coordinate MLP: positional encoding of the input, hidden layers, then
/// output heads that all read the last hidden layer. Heads flagged
/// `uses_direction` additionally read the encoded view direction.
struct MlpSpec {
  int input_dim = 3;
  int input_levels = 10;
  int direction_levels = 0;  // 0: the network never sees a direction
  std::vector<int> layer_widths;
  Activation hidden_activation = Activation::Relu;
  std::vector<HeadSpec> heads;

  int encoded_input_dim() const { return static_cast<int>(encoded_size(input_dim, input_levels)); }
  int encoded_direction_dim() const {
    return direction_levels > 0 ? static_cast<int>(encoded_size(3, direction_levels)) : 0;
  }
  const HeadSpec* head(const std::string& name) const {
    for (const auto& h : heads)
      if (h.name == name) return &h;
    return nullptr;
  }

  void validate() const {
    require(input_dim >= 1 && input_levels >= 1, ErrorCode::InvariantViolation, "mlp input must be encoded");
    require(!layer_widths.empty(), ErrorCode::InvariantViolation, "mlp needs at least one hidden layer");
    for (int w : layer_widths) require(w >= 1, ErrorCode::InvariantViolation, "hidden widths must be positive");
    require(!heads.empty(), ErrorCode::InvariantViolation, "mlp needs at least one output head");
    for (const auto& h : heads) {
      require(h.width >= 1, ErrorCode::InvariantViolation, "head '" + h.name + "' needs width >= 1");
      require(!h.uses_direction || direction_levels > 0, ErrorCode::InvariantViolation,
              "head '" + h.name + "' reads a direction but direction_levels is 0");
    }
  }
};

/// Vanilla-NeRF style foreground: position encoding -> hidden stack ->
/// raw density (position only) and feature (also view direction).
inline MlpSpec foreground_spec(std::vector<int> widths = std::vector<int>(8, 256), int position_levels = 10,
                               int direction_levels = 4, int feature_dim = 3) {
  MlpSpec s;
  s.input_dim = 3;
  s.input_levels = position_levels;
  s.direction_levels = direction_levels;
  s.layer_widths = std::move(widths);
  s.heads = {{"density", 1, Activation::Identity, false},
             {"feature", feature_dim, Activation::WidenedSigmoid, direction_levels > 0}};
  return s;
}

/// Background on the sphere: PE(2 -> 40) -> 64 -> 64 -> 64 -> 64 -> feature.
/// feature_dim 32 reproduces the feature-rendering widths, 3 emits RGB.
inline MlpSpec background_spec(int feature_dim = 32, int levels = 10,
                               std::vector<int> widths = {64, 64, 64, 64}) {
  MlpSpec s;
  s.input_dim = 2;
  s.input_levels = levels;
  s.direction_levels = 0;
  s.layer_widths = std::move(widths);
  s.heads = {{"feature", feature_dim, Activation::WidenedSigmoid, false}};
  return s;
}

struct LayerShape {
  std::string name;
  int rows = 0;  // outputs
  int cols = 0;  // inputs
  std::size_t weight_offset = 0;  // row-major rows x cols block in the flat vector
  std::size_t bias_offset = 0;    // rows entries
  std::size_t count() const { return static_cast<std::size_t>(rows) * cols + rows; }
};

struct NetworkLayout {
  MlpSpec spec;
  std::vector<LayerShape> hidden;
  std::vector<LayerShape> heads;  // same order as spec.heads
  std::size_t offset = 0;
  std::size_t count = 0;

  const LayerShape& head(const std::string& name) const {
    for (std::size_t i = 0; i < heads.size(); ++i)
      if (spec.heads[i].name == name) return heads[i];
    fail(ErrorCode::InvalidArgument, "network has no head named '" + name + "'");
  }
  std::size_t head_index(const std::string& name) const {
    for (std::size_t i = 0; i < heads.size(); ++i)
      if (spec.heads[i].name == name) return i;
    fail(ErrorCode::InvalidArgument, "network has no head named '" + name + "'");
  }
};

inline NetworkLayout make_layout(const MlpSpec& spec, std::size_t offset) {
  spec.validate();
  NetworkLayout layout;
  layout.spec = spec;
  layout.offset = offset;
  std::size_t at = offset;
  auto add = [&](const std::string& name, int rows, int cols) {
    LayerShape l{name, rows, cols, at, at + static_cast<std::size_t>(rows) * cols};
    at += l.count();
    return l;
  };
  int in = spec.encoded_input_dim();
  for (std::size_t i = 0; i < spec.layer_widths.size(); ++i) {
    layout.hidden.push_back(add("hidden" + std::to_string(i), spec.layer_widths[i], in));
    in = spec.layer_widths[i];
  }
  for (const auto& h : spec.heads)
    layout.heads.push_back(add(h.name, h.width, in + (h.uses_direction ? spec.encoded_direction_dim() : 0)));
  layout.count = at - offset;
  return layout;
}

/// All trainable values in one flat vector: foreground block, then
/// background block. Gradients share this layout.
struct SceneParameters {
  NetworkLayout foreground;
  NetworkLayout background;
  std::vector<double> flat;
  double sphere_radius = 3.0;

  std::size_t size() const { return flat.size(); }
  std::span<const double> foreground_values() const {
    return std::span<const double>(flat).subspan(foreground.offset, foreground.count);
  }
  std::span<const double> background_values() const {
    return std::span<const double>(flat).subspan(background.offset, background.count);
  }
  int feature_dim() const { return foreground.head("feature").rows; }

  void validate() const {
    require(sphere_radius > 0.0 && std::isfinite(sphere_radius), ErrorCode::InvariantViolation,
            "sphere radius must be positive");
    require(foreground.offset == 0 && background.offset == foreground.count &&
                flat.size() == foreground.count + background.count,
            ErrorCode::InvariantViolation, "flat parameter length does not match the layer shapes");
    require(foreground.head("density").rows == 1, ErrorCode::InvariantViolation, "density head must be scalar");
    require(background.spec.head("density") == nullptr, ErrorCode::InvariantViolation,
            "the background network has no density head");
    require(background.head("feature").rows == foreground.head("feature").rows, ErrorCode::InvariantViolation,
            "foreground and background feature widths differ");
    for (double v : flat) require(std::isfinite(v), ErrorCode::NonFinite, "parameters must be finite");
  }
};

inline SceneParameters make_scene_parameters(const MlpSpec& fg_spec, const MlpSpec& bg_spec, double sphere_radius) {
  SceneParameters p;
  p.foreground = make_layout(fg_spec, 0);
  p.background = make_layout(bg_spec, p.foreground.count);
  p.flat.assign(p.foreground.count + p.background.count, 0.0);
  p.sphere_radius = sphere_radius;
  return p;
}

/// Weights ~ U(-sqrt(3 / fan_in), sqrt(3 / fan_in)) (std 1/sqrt(fan_in)),
/// biases zero. The foreground density head starts at exactly zero so the
/// initial density is the constant softplus(0) = ln 2.
inline SceneParameters init_parameters(const MlpSpec& fg_spec, const MlpSpec& bg_spec, std::uint64_t seed,
                                       double sphere_radius = 3.0) {
  SceneParameters p = make_scene_parameters(fg_spec, bg_spec, sphere_radius);
  require(p.foreground.spec.head("density") != nullptr && p.foreground.spec.head("feature") != nullptr,
          ErrorCode::InvariantViolation, "foreground needs 'density' and 'feature' heads");
  require(p.background.spec.head("feature") != nullptr, ErrorCode::InvariantViolation,
          "background needs a 'feature' head");
  Rng rng(seed);
  auto fill = [&](const LayerShape& l) {
    const double bound = std::sqrt(3.0 / l.cols);
    for (std::size_t i = 0; i < static_cast<std::size_t>(l.rows) * l.cols; ++i)
      p.flat[l.weight_offset + i] = rng.uniform(-bound, bound);
  };
  for (const NetworkLayout* net : {&p.foreground, &p.background}) {
    for (const auto& l : net->hidden) fill(l);
    for (const auto& l : net->heads) fill(l);
  }
  const LayerShape& density = p.foreground.head("density");
  std::fill_n(p.flat.begin() + static_cast<std::ptrdiff_t>(density.weight_offset), density.count(), 0.0);
  p.validate();
  return p;
}

struct FieldSample {
  std::vector<double> feature;
  double raw_density = 0.0;
  double density = 0.0;
};

namespace detail {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline RowMajorMap weights(std::span<const double> flat, const LayerShape& l) {
  return RowMajorMap(flat.data() + l.weight_offset, l.rows, l.cols);
}
inline Eigen::Map<const Eigen::VectorXd> bias(std::span<const double> flat, const LayerShape& l) {
  return Eigen::Map<const Eigen::VectorXd>(flat.data() + l.bias_offset, l.rows);
}

inline void activate(Eigen::MatrixXd& m, Activation a) {
  switch (a) {
    case Activation::Identity:
      break;
    case Activation::Relu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::Softplus:
      m = m.unaryExpr([](double x) { return ad::detail::softplus(x); });
      break;
    case Activation::WidenedSigmoid:
      m = m.unaryExpr([](double x) {
        const double y = (1.0 + 2.0 * kSigmoidMargin) * ad::detail::sigmoid(x) - kSigmoidMargin;
        return ad::ops::min(ad::ops::max(y, 0.0), 1.0);
      });
      break;
  }
}

template <class S>
S activate(S x, Activation a) {
  using namespace ad::ops;
  switch (a) {
    case Activation::Identity:
      return x;
    case Activation::Relu:
      return relu(x);
    case Activation::Softplus:
      return softplus(x);
    case Activation::WidenedSigmoid:
      return min(max((1.0 + 2.0 * kSigmoidMargin) * sigmoid(x) - kSigmoidMargin, 0.0), 1.0);
  }
  return x;
}

}  // namespace detail

/// Batched plain evaluation. `encoded` holds one encoded input per column,
/// `encoded_dirs` one encoded direction per column (ignored when no head
/// reads directions). Returns the activated output of every head
/// (rows = head width, one column per input).
inline std::vector<Eigen::MatrixXd> mlp_forward(std::span<const double> flat, const NetworkLayout& net,
                                                const Eigen::MatrixXd& encoded,
                                                const Eigen::MatrixXd* encoded_dirs = nullptr) {
  Eigen::MatrixXd h = encoded;
  for (const auto& l : net.hidden) {
    Eigen::MatrixXd next = detail::weights(flat, l) * h;
    next.colwise() += detail::bias(flat, l);
    detail::activate(next, net.spec.hidden_activation);
    h = std::move(next);
  }
  std::vector<Eigen::MatrixXd> out;
  out.reserve(net.heads.size());
  for (std::size_t i = 0; i < net.heads.size(); ++i) {
    const auto& l = net.heads[i];
    const auto& hs = net.spec.heads[i];
    const auto w = detail::weights(flat, l);
    Eigen::MatrixXd y = w.leftCols(h.rows()) * h;
    if (hs.uses_direction) {
      require(encoded_dirs != nullptr && encoded_dirs->cols() == h.cols(), ErrorCode::ShapeMismatch,
              "head '" + hs.name + "' needs encoded directions");
      y.noalias() += w.rightCols(encoded_dirs->rows()) * (*encoded_dirs);
    }
    y.colwise() += detail::bias(flat, l);
    detail::activate(y, hs.activation);
    out.push_back(std::move(y));
  }
  return out;
}

/// Forward pass state kept for the batched backward pass. Buffers are
/// reused when the same cache is passed again with the same shapes.
struct MlpCache {
  std::vector<Eigen::MatrixXd> act;  // act[0]: input; act[k + 1]: output of hidden layer k
  std::vector<Eigen::MatrixXd> pre;  // pre-activation of each hidden layer
  Eigen::MatrixXd dirs;              // encoded directions (empty if unused)
  std::vector<Eigen::MatrixXd> head_pre;
  std::vector<Eigen::MatrixXd> head_out;
  // backward scratch
  Eigen::MatrixXd dh, dz, dh_next;
  Eigen::VectorXd ones;

  const Eigen::MatrixXd& last() const { return act.back(); }
};

namespace detail {

/// d *= activate'(pre), with the same branch choices as the recorded
/// operations (relu and the clamps pass the gradient at their kinks).
inline void apply_slope(Eigen::MatrixXd& d, const Eigen::MatrixXd& pre, Activation a) {
  switch (a) {
    case Activation::Identity:
      break;
    case Activation::Relu:
      d = (pre.array() >= 0.0).select(d, 0.0);
      break;
    case Activation::Softplus:
      d.array() *= pre.array().unaryExpr([](double x) { return ad::detail::sigmoid(x); });
      break;
    case Activation::WidenedSigmoid:
      d.array() *= pre.array().unaryExpr([](double x) {
        const double s = ad::detail::sigmoid(x);
        const double y = (1.0 + 2.0 * kSigmoidMargin) * s - kSigmoidMargin;
        return y >= 0.0 && y <= 1.0 ? (1.0 + 2.0 * kSigmoidMargin) * s * (1.0 - s) : 0.0;
      });
      break;
  }
}

using MutableRowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

inline void mlp_forward_cached(std::span<const double> flat, const NetworkLayout& net, const Eigen::MatrixXd& encoded,
                               const Eigen::MatrixXd* encoded_dirs, MlpCache& c) {
  const std::size_t layers = net.hidden.size();
  c.act.resize(layers + 1);
  c.pre.resize(layers);
  c.act[0] = encoded;
  for (std::size_t k = 0; k < layers; ++k) {
    const auto& l = net.hidden[k];
    c.pre[k].resize(l.rows, encoded.cols());
    c.pre[k].noalias() = detail::weights(flat, l) * c.act[k];
    c.pre[k].colwise() += detail::bias(flat, l);
    c.act[k + 1] = c.pre[k];
    detail::activate(c.act[k + 1], net.spec.hidden_activation);
  }
  if (encoded_dirs)
    c.dirs = *encoded_dirs;
  else
    c.dirs.resize(0, 0);
  const Eigen::MatrixXd& h = c.last();
  c.head_pre.resize(net.heads.size());
  c.head_out.resize(net.heads.size());
  for (std::size_t i = 0; i < net.heads.size(); ++i) {
    const auto& l = net.heads[i];
    const auto& hs = net.spec.heads[i];
    const auto w = detail::weights(flat, l);
    Eigen::MatrixXd& z = c.head_pre[i];
    z.resize(l.rows, h.cols());
    z.noalias() = w.leftCols(h.rows()) * h;
    if (hs.uses_direction) {
      require(encoded_dirs != nullptr && encoded_dirs->cols() == h.cols(), ErrorCode::ShapeMismatch,
              "head '" + hs.name + "' needs encoded directions");
      z.noalias() += w.rightCols(encoded_dirs->rows()) * (*encoded_dirs);
    }
    z.colwise() += detail::bias(flat, l);
    c.head_out[i] = z;
    detail::activate(c.head_out[i], hs.activation);
  }
}

inline MlpCache mlp_forward_cached(std::span<const double> flat, const NetworkLayout& net,
                                   const Eigen::MatrixXd& encoded, const Eigen::MatrixXd* encoded_dirs = nullptr) {
  MlpCache c;
  mlp_forward_cached(flat, net, encoded, encoded_dirs, c);
  return c;
}

/// Accumulates d(loss)/d(params) into `grad` given the adjoints of the
/// activated head outputs (same shapes as `cache.head_out`).
inline void mlp_backward(std::span<const double> flat, const NetworkLayout& net, MlpCache& cache,
                         const std::vector<Eigen::MatrixXd>& head_adjoint, std::span<double> grad) {
  require(head_adjoint.size() == net.heads.size(), ErrorCode::ShapeMismatch, "one adjoint per head required");
  auto gw = [&](const LayerShape& l) { return detail::MutableRowMajorMap(grad.data() + l.weight_offset, l.rows, l.cols); };
  auto gb = [&](const LayerShape& l) { return Eigen::Map<Eigen::VectorXd>(grad.data() + l.bias_offset, l.rows); };
  const Eigen::MatrixXd& last = cache.last();
  const Eigen::Index m = last.cols();
  if (cache.ones.size() != m) cache.ones = Eigen::VectorXd::Ones(m);
  Eigen::MatrixXd& dh = cache.dh;
  Eigen::MatrixXd& dz = cache.dz;
  dh.setZero(last.rows(), m);
  for (std::size_t i = 0; i < net.heads.size(); ++i) {
    const auto& l = net.heads[i];
    const auto& hs = net.spec.heads[i];
    require(head_adjoint[i].rows() == l.rows && head_adjoint[i].cols() == m, ErrorCode::ShapeMismatch,
            "head adjoint shape differs from the head output");
    dz = head_adjoint[i];
    detail::apply_slope(dz, cache.head_pre[i], hs.activation);
    auto g = gw(l);
    g.leftCols(last.rows()).noalias() += dz * last.transpose();
    if (hs.uses_direction) g.rightCols(cache.dirs.rows()).noalias() += dz * cache.dirs.transpose();
    gb(l).noalias() += dz * cache.ones;
    dh.noalias() += detail::weights(flat, l).leftCols(last.rows()).transpose() * dz;
  }
  for (std::size_t k = net.hidden.size(); k-- > 0;) {
    const auto& l = net.hidden[k];
    detail::apply_slope(dh, cache.pre[k], net.spec.hidden_activation);
    gw(l).noalias() += dh * cache.act[k].transpose();
    gb(l).noalias() += dh * cache.ones;
    if (k > 0) {
      cache.dh_next.resize(l.cols, m);
      cache.dh_next.noalias() = detail::weights(flat, l).transpose() * dh;
      dh.swap(cache.dh_next);
    }
  }
}

/// Records the network on `tape` (whose parameters must be the scene's flat
/// vector). Returns the activated outputs of every head.
inline std::vector<std::vector<ad::Var>> mlp_forward(ad::Tape& tape, const NetworkLayout& net,
                                                     std::span<const double> encoded,
                                                     std::span<const double> encoded_dir = {}) {
  auto affine = [&tape](std::span<const ad::Var> in, const LayerShape& l) {
    const ad::Var first = tape.make_contiguous(in);
    std::vector<ad::Var> pre;
    pre.reserve(l.rows);
    for (int r = 0; r < l.rows; ++r)
      pre.push_back(tape.affine_row(first, in.size(), l.weight_offset + static_cast<std::size_t>(r) * l.cols,
                                    static_cast<std::uint32_t>(l.bias_offset + r)));
    return pre;
  };
  auto run = [&tape](ad::Var first, std::size_t n) {
    std::vector<ad::Var> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = ad::Var{&tape, first.index + static_cast<std::uint32_t>(i)};
    return v;
  };

  std::vector<ad::Var> h = run(tape.constants(encoded), encoded.size());
  for (const auto& l : net.hidden) {
    std::vector<ad::Var> next;
    next.reserve(l.rows);
    for (ad::Var pre : affine(h, l)) next.push_back(detail::activate(pre, net.spec.hidden_activation));
    h = std::move(next);
  }
  const bool any_dir = std::any_of(net.spec.heads.begin(), net.spec.heads.end(),
                                   [](const HeadSpec& hs) { return hs.uses_direction; });
  std::vector<ad::Var> with_dir;
  if (any_dir) {
    require(encoded_dir.size() == static_cast<std::size_t>(net.spec.encoded_direction_dim()),
            ErrorCode::ShapeMismatch, "encoded direction has the wrong size");
    // Pushed right after the last activations, so [h, dir] is usually
    // already one contiguous run and needs no copy.
    with_dir = h;
    const auto dir = run(tape.constants(encoded_dir), encoded_dir.size());
    with_dir.insert(with_dir.end(), dir.begin(), dir.end());
  }
  std::vector<std::vector<ad::Var>> out;
  out.reserve(net.heads.size());
  for (std::size_t i = 0; i < net.heads.size(); ++i) {
    const auto& hs = net.spec.heads[i];
    std::vector<ad::Var> y;
    for (ad::Var pre : affine(hs.uses_direction ? with_dir : h, net.heads[i]))
      y.push_back(detail::activate(pre, hs.activation));
    out.push_back(std::move(y));
  }
  return out;
}

/// Encoded foreground input: position scaled by the sphere radius into the
/// unit ball, then encoded.
inline void encode_foreground_position(const SceneParameters& p, const Vec3& x, std::span<double> out) {
  const double in[3] = {x.x() / p.sphere_radius, x.y() / p.sphere_radius, x.z() / p.sphere_radius};
  positional_encode_into(in, p.foreground.spec.input_levels, out);
}

inline void encode_direction(int levels, const Vec3& d, std::span<double> out) {
  const double in[3] = {d.x(), d.y(), d.z()};
  positional_encode_into(in, levels, out);
}

inline void encode_background_point(const SphericalPoint& s, int levels, std::span<double> out) {
  const auto a = normalized_angles(s);
  positional_encode_into(a, levels, out);
}

struct ForegroundBatch {
  Eigen::MatrixXd feature;          // F x N
  Eigen::RowVectorXd raw_density;   // N
  Eigen::RowVectorXd density;       // N
};

/// Foreground field at N points sharing or not sharing a direction
/// (`directions` has one column per point, or exactly one column).
inline ForegroundBatch eval_foreground_batch(const SceneParameters& p, std::span<const Vec3> points,
                                             std::span<const Vec3> directions) {
  const auto& spec = p.foreground.spec;
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd enc(spec.encoded_input_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(points[i].norm() < p.sphere_radius, ErrorCode::OutOfBounds,
            "foreground point lies outside the background sphere");
    encode_foreground_position(p, points[i], std::span<double>(enc.col(i).data(), enc.rows()));
  }
  Eigen::MatrixXd dirs;
  if (spec.direction_levels > 0) {
    require(directions.size() == points.size() || directions.size() == 1, ErrorCode::ShapeMismatch,
            "need one direction per point or a single shared direction");
    dirs.resize(spec.encoded_direction_dim(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3& d = directions.size() == 1 ? directions[0] : directions[i];
      encode_direction(spec.direction_levels, d, std::span<double>(dirs.col(i).data(), dirs.rows()));
    }
  }
  auto heads = mlp_forward(p.flat, p.foreground, enc, spec.direction_levels > 0 ? &dirs : nullptr);
  ForegroundBatch out;
  out.raw_density = heads[p.foreground.head_index("density")].row(0);
  out.density = out.raw_density.unaryExpr([](double x) { return ad::detail::softplus(x); });
  out.feature = std::move(heads[p.foreground.head_index("feature")]);
  return out;
}

inline FieldSample eval_foreground(const SceneParameters& p, const Vec3& point, const Vec3& direction) {
  const ForegroundBatch b = eval_foreground_batch(p, std::span<const Vec3>(&point, 1),
                                                  std::span<const Vec3>(&direction, 1));
  FieldSample s;
  s.feature.assign(b.feature.data(), b.feature.data() + b.feature.rows());
  s.raw_density = b.raw_density[0];
  s.density = b.density[0];
  return s;
}

/// Background features, one column per spherical point.
inline Eigen::MatrixXd eval_background_batch(const SceneParameters& p, std::span<const SphericalPoint> s) {
  const auto& spec = p.background.spec;
  Eigen::MatrixXd enc(spec.encoded_input_dim(), static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i)
    encode_background_point(s[i], spec.input_levels,
                            std::span<double>(enc.col(static_cast<Eigen::Index>(i)).data(), enc.rows()));
  auto heads = mlp_forward(p.flat, p.background, enc);
  return std::move(heads[p.background.head_index("feature")]);
}

inline std::vector<double> eval_background(const SceneParameters& p, const SphericalPoint& s) {
  const Eigen::MatrixXd f = eval_background_batch(p, std::span<const SphericalPoint>(&s, 1));
  return std::vector<double>(f.data(), f.data() + f.rows());
}

/// Tape-recorded foreground sample: activated feature and density.
struct RecordedSample {
  std::vector<ad::Var> feature;
  ad::Var density;
};

inline RecordedSample record_foreground(ad::Tape& tape, const SceneParameters& p, const Vec3& point,
                                        std::span<const double> encoded_dir) {
  require(point.norm() < p.sphere_radius, ErrorCode::OutOfBounds, "foreground point lies outside the sphere");
  std::vector<double> enc(static_cast<std::size_t>(p.foreground.spec.encoded_input_dim()));
  encode_foreground_position(p, point, enc);
  auto heads = mlp_forward(tape, p.foreground, enc, encoded_dir);
  RecordedSample s;
  s.density = ad::ops::softplus(heads[p.foreground.head_index("density")][0]);
  s.feature = std::move(heads[p.foreground.head_index("feature")]);
  return s;
}

inline std::vector<ad::Var> record_background(ad::Tape& tape, const SceneParameters& p, const SphericalPoint& s) {
  std::vector<double> enc(static_cast<std::size_t>(p.background.spec.encoded_input_dim()));
  encode_background_point(s, p.background.spec.input_levels, enc);
  auto heads = mlp_forward(tape, p.background, enc);
  return std::move(heads[p.background.head_index("feature")]);
}

}  // namespace spherebg
