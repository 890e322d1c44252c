#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "spherebg/error.hpp"

// Scalar reverse-mode tape. Every node holds one real value; a matrix-vector
// product is recorded as one Affine node per output row whose inputs are a
// contiguous run of earlier nodes and whose weights are read straight from
// the parameter vector, so the dense inner loops stay contiguous.

namespace spherebg::ad {

enum class Op : std::uint8_t {
  Const,
  Param,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,     // a * k
  AddConst,  // a + k
  Exp,
  Sin,
  Cos,
  Softplus,
  Sigmoid,
  Min,
  Max,
  MinConst,  // min(a, k)
  MaxConst,  // max(a, k)
  Abs,
  Affine,  // sum_j W[c + j] * x[a + j] + bias[d], j < b
};

struct Node {
  Op op = Op::Const;
  bool needs_grad = false;
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  std::uint32_t c = 0;
  std::uint32_t d = 0;
  double k = 0.0;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;

  double value() const;
};

struct GradientVector {
  std::vector<double> values;

  GradientVector() = default;
  explicit GradientVector(std::size_t n) : values(n, 0.0) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

inline constexpr std::uint32_t kNoBias = UINT32_MAX;

class Tape {
 public:
  Tape() = default;
  explicit Tape(std::span<const double> params) : params_(params) {}

  void reset(std::span<const double> params) {
    params_ = params;
    clear();
  }
  void clear() {
    nodes_.clear();
    values_.clear();
  }
  void reserve(std::size_t n) {
    nodes_.reserve(n);
    values_.reserve(n);
  }

  std::span<const double> params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<double>& values() const { return values_; }
  double value(Var v) const { return values_[v.index]; }

  Var constant(double v) { return push(Node{Op::Const, false}, v); }

  /// Leaf bound to params[index]; its adjoint lands in gradient[index].
  Var parameter(std::size_t index) {
    require(index < params_.size(), ErrorCode::OutOfRange, "parameter index out of range");
    Node n{Op::Param, true};
    n.a = static_cast<std::uint32_t>(index);
    return push(n, params_[index]);
  }

  /// Contiguous run of constants; returns the first.
  Var constants(std::span<const double> vs) {
    const Var first{this, static_cast<std::uint32_t>(nodes_.size())};
    for (double v : vs) constant(v);
    return first;
  }

  Var unary(Op op, Var a, double value, double k = 0.0) {
    Node n{op, nodes_[a.index].needs_grad};
    n.a = a.index;
    n.k = k;
    return push(n, value);
  }

  Var binary(Op op, Var a, Var b, double value) {
    Node n{op, nodes_[a.index].needs_grad || nodes_[b.index].needs_grad};
    n.a = a.index;
    n.b = b.index;
    return push(n, value);
  }

  /// One output row of W x + bias, where x is `count` contiguous nodes
  /// starting at `first_input`, W's row starts at params[weight_offset] and
  /// the bias is params[bias_index] (kNoBias for none).
  Var affine_row(Var first_input, std::size_t count, std::size_t weight_offset, std::uint32_t bias_index) {
    const double* w = params_.data() + weight_offset;
    const double* x = values_.data() + first_input.index;
    double acc = bias_index == kNoBias ? 0.0 : params_[bias_index];
    for (std::size_t j = 0; j < count; ++j) acc += w[j] * x[j];
    bool input_grad = false;
    for (std::size_t j = 0; j < count && !input_grad; ++j) input_grad = nodes_[first_input.index + j].needs_grad;
    Node n{Op::Affine, true};
    n.a = first_input.index;
    n.b = static_cast<std::uint32_t>(count);
    n.c = static_cast<std::uint32_t>(weight_offset);
    n.d = bias_index;
    n.k = input_grad ? 1.0 : 0.0;
    return push(n, acc);
  }

  /// Copies `vs` into a contiguous run if necessary (one identity node each).
  Var make_contiguous(std::span<const Var> vs) {
    bool contiguous = true;
    for (std::size_t j = 1; j < vs.size() && contiguous; ++j) contiguous = vs[j].index == vs[0].index + j;
    if (contiguous && !vs.empty()) return vs[0];
    const Var first{this, static_cast<std::uint32_t>(nodes_.size())};
    for (Var v : vs) unary(Op::Scale, v, values_[v.index], 1.0);
    return first;
  }

 private:
  Var push(const Node& n, double value) {
    nodes_.push_back(n);
    values_.push_back(value);
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::span<const double> params_;
  std::vector<Node> nodes_;
  std::vector<double> values_;
};

inline double Var::value() const { return tape->value(*this); }

namespace detail {
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace detail

/// Scalar functions shared by the plain (double) and recorded (Var) paths.
/// Generic rendering code calls these unqualified within namespace ops.
namespace ops {

inline double exp(double x) { return std::exp(x); }
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double softplus(double x) { return detail::softplus(x); }
inline double sigmoid(double x) { return detail::sigmoid(x); }
inline double min(double a, double b) { return a <= b ? a : b; }
inline double max(double a, double b) { return a >= b ? a : b; }
inline double abs(double x) { return std::abs(x); }
inline double relu(double x) { return x >= 0.0 ? x : 0.0; }

inline Var exp(Var x) { return x.tape->unary(Op::Exp, x, std::exp(x.value())); }
inline Var sin(Var x) { return x.tape->unary(Op::Sin, x, std::sin(x.value())); }
inline Var cos(Var x) { return x.tape->unary(Op::Cos, x, std::cos(x.value())); }
inline Var softplus(Var x) { return x.tape->unary(Op::Softplus, x, detail::softplus(x.value())); }
inline Var sigmoid(Var x) { return x.tape->unary(Op::Sigmoid, x, detail::sigmoid(x.value())); }
inline Var min(Var a, Var b) { return a.tape->binary(Op::Min, a, b, min(a.value(), b.value())); }
inline Var max(Var a, Var b) { return a.tape->binary(Op::Max, a, b, max(a.value(), b.value())); }
inline Var min(Var a, double k) { return a.tape->unary(Op::MinConst, a, min(a.value(), k), k); }
inline Var max(Var a, double k) { return a.tape->unary(Op::MaxConst, a, max(a.value(), k), k); }
inline Var abs(Var x) { return x.tape->unary(Op::Abs, x, std::abs(x.value())); }
inline Var relu(Var x) { return max(x, 0.0); }

}  // namespace ops

inline Var operator+(Var a, Var b) { return a.tape->binary(Op::Add, a, b, a.value() + b.value()); }
inline Var operator-(Var a, Var b) { return a.tape->binary(Op::Sub, a, b, a.value() - b.value()); }
inline Var operator*(Var a, Var b) { return a.tape->binary(Op::Mul, a, b, a.value() * b.value()); }
inline Var operator-(Var a) { return a.tape->unary(Op::Neg, a, -a.value()); }
inline Var operator*(Var a, double k) { return a.tape->unary(Op::Scale, a, a.value() * k, k); }
inline Var operator*(double k, Var a) { return a * k; }
inline Var operator+(Var a, double k) { return a.tape->unary(Op::AddConst, a, a.value() + k, k); }
inline Var operator+(double k, Var a) { return a + k; }
inline Var operator-(Var a, double k) { return a + (-k); }
inline Var operator-(double k, Var a) { return (-a) + k; }
inline Var& operator+=(Var& a, Var b) { return a = a + b; }

/// Accumulates seed * d(output)/d(params) into `grad`. `adjoint` is scratch.
inline void backward_into(const Tape& tape, Var output, std::span<double> grad, std::vector<double>& adjoint,
                          double seed = 1.0) {
  require(output.index < tape.size(), ErrorCode::OutOfRange, "output node is not on this tape");
  require(grad.size() == tape.params().size(), ErrorCode::ShapeMismatch, "gradient size must match parameters");
  const auto& nodes = tape.nodes();
  const auto& val = tape.values();
  const auto params = tape.params();
  adjoint.assign(output.index + 1, 0.0);
  adjoint[output.index] = seed;
  for (std::size_t i = output.index + 1; i-- > 0;) {
    const double g = adjoint[i];
    if (g == 0.0) continue;
    const Node& n = nodes[i];
    if (!n.needs_grad) continue;
    switch (n.op) {
      case Op::Const:
        break;
      case Op::Param:
        grad[n.a] += g;
        break;
      case Op::Add:
        adjoint[n.a] += g;
        adjoint[n.b] += g;
        break;
      case Op::Sub:
        adjoint[n.a] += g;
        adjoint[n.b] -= g;
        break;
      case Op::Mul:
        adjoint[n.a] += g * val[n.b];
        adjoint[n.b] += g * val[n.a];
        break;
      case Op::Neg:
        adjoint[n.a] -= g;
        break;
      case Op::Scale:
        adjoint[n.a] += g * n.k;
        break;
      case Op::AddConst:
        adjoint[n.a] += g;
        break;
      case Op::Exp:
        adjoint[n.a] += g * val[i];
        break;
      case Op::Sin:
        adjoint[n.a] += g * std::cos(val[n.a]);
        break;
      case Op::Cos:
        adjoint[n.a] -= g * std::sin(val[n.a]);
        break;
      case Op::Softplus:
        adjoint[n.a] += g * detail::sigmoid(val[n.a]);
        break;
      case Op::Sigmoid:
        adjoint[n.a] += g * val[i] * (1.0 - val[i]);
        break;
      case Op::Min:
        adjoint[val[n.a] <= val[n.b] ? n.a : n.b] += g;
        break;
      case Op::Max:
        adjoint[val[n.a] >= val[n.b] ? n.a : n.b] += g;
        break;
      case Op::MinConst:
        if (val[n.a] <= n.k) adjoint[n.a] += g;
        break;
      case Op::MaxConst:
        if (val[n.a] >= n.k) adjoint[n.a] += g;
        break;
      case Op::Abs:
        if (val[n.a] > 0.0)
          adjoint[n.a] += g;
        else if (val[n.a] < 0.0)
          adjoint[n.a] -= g;
        break;
      case Op::Affine: {
        const std::size_t count = n.b;
        const double* w = params.data() + n.c;
        const double* x = val.data() + n.a;
        double* gw = grad.data() + n.c;
        for (std::size_t j = 0; j < count; ++j) gw[j] += g * x[j];
        if (n.d != kNoBias) grad[n.d] += g;
        if (n.k != 0.0) {
          double* ax = adjoint.data() + n.a;
          for (std::size_t j = 0; j < count; ++j) ax[j] += g * w[j];
        }
        break;
      }
    }
  }
}

/// d(output)/d(params) as a fresh vector. The single-element span overload
/// exists for callers that hold outputs as vectors.
inline GradientVector backward(const Tape& tape, Var output) {
  GradientVector grad(tape.params().size());
  std::vector<double> adjoint;
  backward_into(tape, output, grad.values, adjoint);
  return grad;
}

inline GradientVector backward(const Tape& tape, std::span<const Var> outputs) {
  require(outputs.size() == 1, ErrorCode::NonScalarOutput,
          "backward needs a scalar output, got " + std::to_string(outputs.size()) + " values");
  return backward(tape, outputs[0]);
}

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every i.
inline GradientVector finite_difference_gradient(const std::function<double(std::span<const double>)>& loss_fn,
                                                 std::span<const double> params, double h) {
  require(h > 0.0, ErrorCode::InvalidArgument, "finite difference step must be positive");
  std::vector<double> p(params.begin(), params.end());
  GradientVector grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = loss_fn(p);
    p[i] = orig - h;
    const double fm = loss_fn(p);
    p[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace spherebg::ad
