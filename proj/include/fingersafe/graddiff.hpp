#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "fingersafe/imgcore.hpp"

// Reverse-mode differentiation over the image primitives used by the
// protection objective. A Tape records eagerly evaluated nodes; backward()
// walks them in reverse to produce vector-Jacobian products.
namespace fingersafe::ad {

struct Shape {
  int height = 1;
  int width = 1;
  int channels = 1;

  std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense value of a node. Unlike imgcore::Image any channel count is allowed;
/// complex planes are stored as 2 interleaved channels (re, im).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  static Tensor zeros(Shape shape) { return {shape, std::vector<double>(shape.size(), 0.0)}; }
  static Tensor scalar(double v) { return {Shape{}, {v}}; }
  static Tensor from_image(const imgcore::Image& x);
  imgcore::Image to_image() const;
};

enum class Op : int {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  SafeDiv,
  Sin,
  Atan2,
  Abs,
  Relu,
  Square,
  Sqrt,
  Exp,
  Log,
  Scale,
  Offset,
  Sum,
  Mean,
  L1Norm,
  L2Norm,
  Conv2d,
  Fft2,
  Ifft2,
  ComplexAbs,
  ComplexFilter,
  MakeComplex,
  RealPart,
  ImagPart,
  Luminance,
  Resize,
  Crop,
  PadReplicate,
  Subsample,
  Concat,
  Clamp,
  Detach,
  WrapPeriod,
  Count_
};

const char* op_name(Op op);

/// Reference to a node on a specific tape.
struct Var {
  std::size_t index = 0;
  Shape shape;
};

using ComplexSpectrum = std::vector<std::complex<double>>;

class Tape {
 public:
  static constexpr double kSafeDivEpsilon = 1e-8;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var leaf(const imgcore::Image& x) { return leaf(Tensor::from_image(x)); }
  Var constant(Tensor value);
  Var constant(const imgcore::Image& x) { return constant(Tensor::from_image(x)); }
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  /// Generic entry point for parameter-free primitives (elementwise ops,
  /// reductions, fft2/ifft2, complex parts, luminance, detach). Primitives
  /// that need parameters must go through their named method.
  Var record(Op op, std::span<const Var> inputs);
  Var record(Op op, std::initializer_list<Var> inputs) {
    return record(op, std::span<const Var>(inputs.begin(), inputs.size()));
  }

  // Elementwise. Binary ops broadcast when one side is a scalar.
  Var add(Var a, Var b) { return record(Op::Add, {a, b}); }
  Var sub(Var a, Var b) { return record(Op::Sub, {a, b}); }
  Var mul(Var a, Var b) { return record(Op::Mul, {a, b}); }
  Var div(Var a, Var b) { return record(Op::Div, {a, b}); }
  /// a / (b + 1e-8)
  Var safe_div(Var a, Var b) { return record(Op::SafeDiv, {a, b}); }
  Var sin(Var a) { return record(Op::Sin, {a}); }
  /// Full-quadrant atan2(y, x); atan2(0, 0) = 0 with zero gradient.
  Var atan2(Var y, Var x) { return record(Op::Atan2, {y, x}); }
  Var abs(Var a) { return record(Op::Abs, {a}); }
  Var relu(Var a) { return record(Op::Relu, {a}); }
  Var square(Var a) { return record(Op::Square, {a}); }
  Var sqrt(Var a) { return record(Op::Sqrt, {a}); }
  Var exp(Var a) { return record(Op::Exp, {a}); }
  Var log(Var a) { return record(Op::Log, {a}); }
  Var scale(Var a, double factor);
  Var offset(Var a, double shift);

  // Reductions to a scalar.
  Var sum(Var a) { return record(Op::Sum, {a}); }
  Var mean(Var a) { return record(Op::Mean, {a}); }
  Var l1_norm(Var a) { return record(Op::L1Norm, {a}); }
  Var l2_norm(Var a) { return record(Op::L2Norm, {a}); }

  // Linear image operators.
  Var conv2d(Var a, std::shared_ptr<const imgcore::Kernel> kernel,
             imgcore::Padding padding = imgcore::Padding::Replicate);
  Var fft2(Var a) { return record(Op::Fft2, {a}); }
  Var ifft2(Var a) { return record(Op::Ifft2, {a}); }
  Var complex_abs(Var a) { return record(Op::ComplexAbs, {a}); }
  /// Pointwise product of a complex plane with a fixed complex filter.
  Var complex_filter(Var a, std::shared_ptr<const ComplexSpectrum> filter);
  Var make_complex(Var re, Var im) { return record(Op::MakeComplex, {re, im}); }
  Var real(Var a) { return record(Op::RealPart, {a}); }
  Var imag(Var a) { return record(Op::ImagPart, {a}); }
  Var luminance(Var a) { return record(Op::Luminance, {a}); }
  Var resize(Var a, int height, int width);
  Var crop(Var a, int top, int left, int height, int width);
  Var pad_replicate(Var a, int top, int bottom, int left, int right);
  Var subsample(Var a, int step);
  Var concat(std::span<const Var> parts);

  /// Forward clamp, identity gradient.
  Var clamp(Var a, double lo, double hi);
  Var detach(Var a) { return record(Op::Detach, {a}); }
  /// a mod period into [0, period) with unit derivative.
  Var wrap(Var a, double period);

  Tensor value(Var v) const;
  std::span<const double> data(Var v) const;
  double scalar_value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// d(loss)/d(wrt) for a scalar loss. wrt must be a leaf on this tape.
  Tensor backward(Var loss, Var wrt) const;

  /// Branch indicators of every non-smooth node (abs/relu/l1 signs, atan2
  /// branch side, wrap period index). Two inputs with equal signatures lie
  /// in the same smooth piece of the recorded function.
  std::vector<std::int64_t> kink_signature() const;

 private:
  struct Node {
    Op op = Op::Constant;
    Shape shape;
    std::vector<std::size_t> inputs;
    std::vector<double> value;
    bool requires_grad = false;
    double p0 = 0.0;
    double p1 = 0.0;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    std::shared_ptr<const imgcore::Kernel> kernel;
    imgcore::Padding padding = imgcore::Padding::Replicate;
    std::shared_ptr<const ComplexSpectrum> filter;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  void backprop_node(const Node& n, std::span<const double> g, std::vector<std::vector<double>>& grads) const;

  std::vector<Node> nodes_;
};

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
  int excluded = 0;
};

using ScalarFunction = std::function<Var(Tape&, Var)>;

/// Compares backward() against central differences (f(x+he)-f(x-he))/2h at
/// the given flat coordinates. A coordinate is skipped when moving it by
/// +-kink_radius*h changes the kink signature, i.e. a non-differentiable
/// point lies within that radius. Relative error uses
/// max(|ad|, |fd|, 1e-4 * max|grad|) as the denominator.
GradCheck finite_difference_check(const ScalarFunction& f, const Tensor& x, double h,
                                  std::span<const std::size_t> coords, double kink_radius = 10.0);

/// Samples coordinates uniformly until `samples` of them pass the kink filter.
GradCheck finite_difference_check(const ScalarFunction& f, const Tensor& x, double h, int samples,
                                  std::uint64_t seed, double kink_radius = 10.0);

}  // namespace fingersafe::ad
