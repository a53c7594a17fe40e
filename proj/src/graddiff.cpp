#include "fingersafe/graddiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <unordered_set>

#include "fingersafe/errors.hpp"

namespace fingersafe::ad {

using imgcore::Image;

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

bool is_scalar(const Shape& s) { return s.size() == 1; }

Shape broadcast_shape(const Shape& a, const Shape& b, Op op) {
  if (a == b) return a;
  if (is_scalar(a)) return b;
  if (is_scalar(b)) return a;
  throw ShapeError(std::string("shape mismatch in ") + op_name(op));
}

void require_complex(const Shape& s, Op op) {
  if (s.channels != 2) throw ShapeError(std::string(op_name(op)) + " expects a 2-channel complex tensor");
}

std::span<std::complex<double>> as_complex(std::vector<double>& v) {
  return {reinterpret_cast<std::complex<double>*>(v.data()), v.size() / 2};
}

}  // namespace

const char* op_name(Op op) {
  static const char* names[] = {"leaf",    "constant",   "add",        "sub",        "mul",         "div",
                                "safe_div", "sin",       "atan2",      "abs",        "relu",        "square",
                                "sqrt",    "exp",        "log",        "scale",      "offset",      "sum",
                                "mean",    "l1_norm",    "l2_norm",    "conv2d",     "fft2",        "ifft2",
                                "complex_abs", "complex_filter", "make_complex", "real", "imag",   "luminance",
                                "resize",  "crop",       "pad_replicate", "subsample", "concat",    "clamp",
                                "detach",  "wrap"};
  static_assert(sizeof(names) / sizeof(names[0]) == static_cast<std::size_t>(Op::Count_));
  auto i = static_cast<int>(op);
  if (i < 0 || i >= static_cast<int>(Op::Count_)) return "unknown";
  return names[i];
}

Tensor Tensor::from_image(const Image& x) {
  Tensor t{Shape{x.height(), x.width(), x.channels()}, {}};
  t.data.assign(x.data().begin(), x.data().end());
  return t;
}

Image Tensor::to_image() const { return Image(shape.height, shape.width, shape.channels, data); }

// ---------------------------------------------------------------- recording

const Tape::Node& Tape::node(Var v) const {
  if (v.index >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.index];
}

Var Tape::push(Node n) {
  if (n.value.size() != n.shape.size()) throw ShapeError("internal: node value size mismatch");
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1, nodes_.back().shape};
}

Var Tape::leaf(Tensor value) {
  if (value.data.size() != value.shape.size()) throw ShapeError("leaf tensor size mismatch");
  Node n;
  n.op = Op::Leaf;
  n.shape = value.shape;
  n.value = std::move(value.data);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  if (value.data.size() != value.shape.size()) throw ShapeError("constant tensor size mismatch");
  Node n;
  n.op = Op::Constant;
  n.shape = value.shape;
  n.value = std::move(value.data);
  return push(std::move(n));
}

Var Tape::record(Op op, std::span<const Var> inputs) {
  auto arity = [&](std::size_t k) {
    if (inputs.size() != k)
      throw ConfigError(std::string(op_name(op)) + " expects " + std::to_string(k) + " input(s)");
  };
  Node n;
  n.op = op;
  for (const Var& v : inputs) {
    const Node& in = node(v);
    n.inputs.push_back(v.index);
    n.requires_grad = n.requires_grad || in.requires_grad;
  }

  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::SafeDiv:
    case Op::Atan2: {
      arity(2);
      const Node& a = nodes_[n.inputs[0]];
      const Node& b = nodes_[n.inputs[1]];
      n.shape = broadcast_shape(a.shape, b.shape, op);
      const std::size_t size = n.shape.size();
      n.value.resize(size);
      const bool sa = a.value.size() == 1 && size != 1, sb = b.value.size() == 1 && size != 1;
      for (std::size_t i = 0; i < size; ++i) {
        const double x = a.value[sa ? 0 : i], y = b.value[sb ? 0 : i];
        double r = 0.0;
        switch (op) {
          case Op::Add: r = x + y; break;
          case Op::Sub: r = x - y; break;
          case Op::Mul: r = x * y; break;
          case Op::Div: r = x / y; break;
          case Op::SafeDiv: r = x / (y + kSafeDivEpsilon); break;
          default: r = (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(x, y); break;
        }
        n.value[i] = r;
      }
      break;
    }
    case Op::Sin:
    case Op::Abs:
    case Op::Relu:
    case Op::Square:
    case Op::Sqrt:
    case Op::Exp:
    case Op::Log: {
      arity(1);
      const Node& a = nodes_[n.inputs[0]];
      n.shape = a.shape;
      n.value.resize(a.value.size());
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        const double x = a.value[i];
        double r = 0.0;
        switch (op) {
          case Op::Sin: r = std::sin(x); break;
          case Op::Abs: r = std::abs(x); break;
          case Op::Relu: r = x > 0.0 ? x : 0.0; break;
          case Op::Square: r = x * x; break;
          case Op::Sqrt: r = std::sqrt(x); break;
          case Op::Exp: r = std::exp(x); break;
          default: r = std::log(x); break;
        }
        n.value[i] = r;
      }
      break;
    }
    case Op::Sum:
    case Op::Mean:
    case Op::L1Norm:
    case Op::L2Norm: {
      arity(1);
      const Node& a = nodes_[n.inputs[0]];
      n.shape = Shape{};
      double acc = 0.0;
      for (double x : a.value) {
        if (op == Op::L1Norm) acc += std::abs(x);
        else if (op == Op::L2Norm) acc += x * x;
        else acc += x;
      }
      if (op == Op::Mean) acc /= static_cast<double>(a.value.size());
      if (op == Op::L2Norm) acc = std::sqrt(acc);
      n.value = {acc};
      break;
    }
    case Op::Fft2:
    case Op::Ifft2: {
      arity(1);
      const Node& a = nodes_[n.inputs[0]];
      if (op == Op::Ifft2) require_complex(a.shape, op);
      if (a.shape.channels != 1 && a.shape.channels != 2)
        throw ShapeError("fft2 expects a real plane or a complex plane");
      n.shape = Shape{a.shape.height, a.shape.width, 2};
      n.value.assign(n.shape.size(), 0.0);
      if (a.shape.channels == 1)
        for (std::size_t i = 0; i < a.value.size(); ++i) n.value[2 * i] = a.value[i];
      else
        n.value = a.value;
      imgcore::dft_inplace(as_complex(n.value), n.shape.height, n.shape.width, op == Op::Ifft2);
      break;
    }
    case Op::ComplexAbs: {
      arity(1);
      const Node& a = nodes_[n.inputs[0]];
      require_complex(a.shape, op);
      n.shape = Shape{a.shape.height, a.shape.width, 1};
      n.value.resize(n.shape.size());
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::hypot(a.value[2 * i], a.value[2 * i + 1]);
      break;
    }
    case Op::MakeComplex: {
      arity(2);
      const Node& re = nodes_[n.inputs[0]];
      const Node& im = nodes_[n.inputs[1]];
      if (re.shape != im.shape || re.shape.channels != 1) throw ShapeError("make_complex expects two equal real planes");
      n.shape = Shape{re.shape.height, re.shape.width, 2};
      n.value.resize(n.shape.size());
      for (std::size_t i = 0; i < re.value.size(); ++i) {
        n.value[2 * i] = re.value[i];
        n.value[2 * i + 1] = im.value[i];
      }
      break;
    }
    case Op::RealPart:
    case Op::ImagPart: {
      arity(1);
      const Node& a = nodes_[n.inputs[0]];
      require_complex(a.shape, op);
      n.shape = Shape{a.shape.height, a.shape.width, 1};
      n.value.resize(n.shape.size());
      const std::size_t off = op == Op::RealPart ? 0 : 1;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = a.value[2 * i + off];
      break;
    }
    case Op::Luminance: {
      arity(1);
      const Node& a = nodes_[n.inputs[0]];
      if (a.shape.channels != 1 && a.shape.channels != 3) throw ShapeError("luminance expects 1 or 3 channels");
      n.shape = Shape{a.shape.height, a.shape.width, 1};
      n.value.resize(n.shape.size());
      if (a.shape.channels == 1) {
        n.value = a.value;
      } else {
        for (std::size_t p = 0; p < n.value.size(); ++p)
          n.value[p] = imgcore::kLumaR * a.value[3 * p] + imgcore::kLumaG * a.value[3 * p + 1] +
                       imgcore::kLumaB * a.value[3 * p + 2];
      }
      break;
    }
    case Op::Detach: {
      arity(1);
      const Node& a = nodes_[n.inputs[0]];
      n.shape = a.shape;
      n.value = a.value;
      n.requires_grad = false;
      break;
    }
    default:
      throw ConfigError(std::string("primitive '") + op_name(op) +
                        "' is not supported by record(); use its parameterized method");
  }
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  const Node& in = node(a);
  Node n;
  n.op = Op::Scale;
  n.shape = in.shape;
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.p0 = factor;
  n.value.resize(in.value.size());
  for (std::size_t i = 0; i < in.value.size(); ++i) n.value[i] = factor * in.value[i];
  return push(std::move(n));
}

Var Tape::offset(Var a, double shift) {
  const Node& in = node(a);
  Node n;
  n.op = Op::Offset;
  n.shape = in.shape;
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.p0 = shift;
  n.value.resize(in.value.size());
  for (std::size_t i = 0; i < in.value.size(); ++i) n.value[i] = in.value[i] + shift;
  return push(std::move(n));
}

Var Tape::conv2d(Var a, std::shared_ptr<const imgcore::Kernel> kernel, imgcore::Padding padding) {
  if (!kernel) throw ConfigError("conv2d requires a kernel");
  const Node& in = node(a);
  Node n;
  n.op = Op::Conv2d;
  n.shape = in.shape;
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.kernel = std::move(kernel);
  n.padding = padding;
  const int h = in.shape.height, w = in.shape.width, c = in.shape.channels;
  n.value.resize(in.value.size());
  if (c == 1) {
    imgcore::convolve_plane(in.value, n.value, h, w, *n.kernel, padding);
  } else {
    const std::size_t np = static_cast<std::size_t>(h) * w;
    std::vector<double> plane(np), out(np);
    for (int ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < np; ++p) plane[p] = in.value[p * c + ch];
      imgcore::convolve_plane(plane, out, h, w, *n.kernel, padding);
      for (std::size_t p = 0; p < np; ++p) n.value[p * c + ch] = out[p];
    }
  }
  return push(std::move(n));
}

Var Tape::complex_filter(Var a, std::shared_ptr<const ComplexSpectrum> filter) {
  const Node& in = node(a);
  require_complex(in.shape, Op::ComplexFilter);
  if (!filter || filter->size() != in.value.size() / 2) throw ShapeError("complex_filter: filter size mismatch");
  Node n;
  n.op = Op::ComplexFilter;
  n.shape = in.shape;
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.filter = std::move(filter);
  n.value.resize(in.value.size());
  for (std::size_t i = 0; i < n.filter->size(); ++i) {
    const std::complex<double> z(in.value[2 * i], in.value[2 * i + 1]);
    const std::complex<double> r = (*n.filter)[i] * z;
    n.value[2 * i] = r.real();
    n.value[2 * i + 1] = r.imag();
  }
  return push(std::move(n));
}

Var Tape::resize(Var a, int height, int width) {
  const Node& in = node(a);
  if (height < 1 || width < 1) throw ConfigError("resize target dimensions must be >= 1");
  Node n;
  n.op = Op::Resize;
  n.shape = Shape{height, width, in.shape.channels};
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.i0 = height;
  n.i1 = width;
  auto rows = imgcore::bilinear_axis_plan(in.shape.height, height);
  auto cols = imgcore::bilinear_axis_plan(in.shape.width, width);
  const int c = in.shape.channels, iw = in.shape.width;
  n.value.resize(n.shape.size());
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j)
      for (int ch = 0; ch < c; ++ch) {
        auto at = [&](int r, int q) { return in.value[(static_cast<std::size_t>(r) * iw + q) * c + ch]; };
        const auto& rt = rows[i];
        const auto& ct = cols[j];
        double top = (1 - ct.weight_hi) * at(rt.lo, ct.lo) + ct.weight_hi * at(rt.lo, ct.hi);
        double bot = (1 - ct.weight_hi) * at(rt.hi, ct.lo) + ct.weight_hi * at(rt.hi, ct.hi);
        n.value[(static_cast<std::size_t>(i) * width + j) * c + ch] = (1 - rt.weight_hi) * top + rt.weight_hi * bot;
      }
  return push(std::move(n));
}

Var Tape::crop(Var a, int top, int left, int height, int width) {
  const Node& in = node(a);
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > in.shape.height ||
      left + width > in.shape.width)
    throw ShapeError("crop window outside tensor");
  Node n;
  n.op = Op::Crop;
  n.shape = Shape{height, width, in.shape.channels};
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.i0 = top;
  n.i1 = left;
  const int c = in.shape.channels;
  n.value.resize(n.shape.size());
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j)
      for (int ch = 0; ch < c; ++ch)
        n.value[(static_cast<std::size_t>(i) * width + j) * c + ch] =
            in.value[(static_cast<std::size_t>(top + i) * in.shape.width + left + j) * c + ch];
  return push(std::move(n));
}

Var Tape::pad_replicate(Var a, int top, int bottom, int left, int right) {
  const Node& in = node(a);
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ConfigError("padding must be non-negative");
  Node n;
  n.op = Op::PadReplicate;
  n.shape = Shape{in.shape.height + top + bottom, in.shape.width + left + right, in.shape.channels};
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.i0 = top;
  n.i1 = left;
  const int c = in.shape.channels, ih = in.shape.height, iw = in.shape.width;
  n.value.resize(n.shape.size());
  for (int i = 0; i < n.shape.height; ++i) {
    const int si = std::clamp(i - top, 0, ih - 1);
    for (int j = 0; j < n.shape.width; ++j) {
      const int sj = std::clamp(j - left, 0, iw - 1);
      for (int ch = 0; ch < c; ++ch)
        n.value[(static_cast<std::size_t>(i) * n.shape.width + j) * c + ch] =
            in.value[(static_cast<std::size_t>(si) * iw + sj) * c + ch];
    }
  }
  return push(std::move(n));
}

Var Tape::subsample(Var a, int step) {
  const Node& in = node(a);
  if (step < 1) throw ConfigError("subsample step must be >= 1");
  Node n;
  n.op = Op::Subsample;
  n.shape = Shape{(in.shape.height + step - 1) / step, (in.shape.width + step - 1) / step, in.shape.channels};
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.i0 = step;
  const int c = in.shape.channels;
  n.value.resize(n.shape.size());
  for (int i = 0; i < n.shape.height; ++i)
    for (int j = 0; j < n.shape.width; ++j)
      for (int ch = 0; ch < c; ++ch)
        n.value[(static_cast<std::size_t>(i) * n.shape.width + j) * c + ch] =
            in.value[(static_cast<std::size_t>(i * step) * in.shape.width + j * step) * c + ch];
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat needs at least one input");
  Node n;
  n.op = Op::Concat;
  const Shape first = node(parts[0]).shape;
  int channels = 0;
  for (const Var& v : parts) {
    const Node& in = node(v);
    if (in.shape.height != first.height || in.shape.width != first.width)
      throw ShapeError("concat inputs must share height and width");
    channels += in.shape.channels;
    n.inputs.push_back(v.index);
    n.requires_grad = n.requires_grad || in.requires_grad;
  }
  n.shape = Shape{first.height, first.width, channels};
  n.value.resize(n.shape.size());
  const std::size_t np = static_cast<std::size_t>(first.height) * first.width;
  int off = 0;
  for (std::size_t k : n.inputs) {
    const Node& in = nodes_[k];
    const int c = in.shape.channels;
    for (std::size_t p = 0; p < np; ++p)
      for (int ch = 0; ch < c; ++ch) n.value[p * channels + off + ch] = in.value[p * c + ch];
    off += c;
  }
  return push(std::move(n));
}

Var Tape::clamp(Var a, double lo, double hi) {
  const Node& in = node(a);
  Node n;
  n.op = Op::Clamp;
  n.shape = in.shape;
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.p0 = lo;
  n.p1 = hi;
  n.value.resize(in.value.size());
  for (std::size_t i = 0; i < in.value.size(); ++i) n.value[i] = std::clamp(in.value[i], lo, hi);
  return push(std::move(n));
}

Var Tape::wrap(Var a, double period) {
  if (!(period > 0.0)) throw ConfigError("wrap period must be positive");
  const Node& in = node(a);
  Node n;
  n.op = Op::WrapPeriod;
  n.shape = in.shape;
  n.inputs = {a.index};
  n.requires_grad = in.requires_grad;
  n.p0 = period;
  n.value.resize(in.value.size());
  for (std::size_t i = 0; i < in.value.size(); ++i) {
    double r = in.value[i] - period * std::floor(in.value[i] / period);
    if (r >= period) r -= period;
    n.value[i] = r;
  }
  return push(std::move(n));
}

Tensor Tape::value(Var v) const {
  const Node& n = node(v);
  return Tensor{n.shape, n.value};
}

std::span<const double> Tape::data(Var v) const { return node(v).value; }

double Tape::scalar_value(Var v) const {
  const Node& n = node(v);
  if (n.value.size() != 1) throw ContractError("scalar_value on a non-scalar node");
  return n.value[0];
}

// ---------------------------------------------------------------- backward

Tensor Tape::backward(Var loss, Var wrt) const {
  const Node& root = node(loss);
  if (root.value.size() != 1) throw ContractError("backward requires a scalar loss");
  const Node& target = node(wrt);
  if (target.op != Op::Leaf) throw ContractError("backward target must be a leaf");

  Tensor result = Tensor::zeros(target.shape);
  if (!root.requires_grad || wrt.index > loss.index) return result;

  std::vector<std::vector<double>> grads(loss.index + 1);
  grads[loss.index] = {1.0};
  for (std::size_t k = loss.index + 1; k-- > 0;) {
    if (grads[k].empty()) continue;
    const Node& n = nodes_[k];
    if (!n.requires_grad || n.op == Op::Leaf || n.op == Op::Constant) continue;
    backprop_node(n, grads[k], grads);
    if (k != wrt.index) std::vector<double>().swap(grads[k]);
  }
  if (!grads[wrt.index].empty()) result.data = std::move(grads[wrt.index]);
  return result;
}

void Tape::backprop_node(const Node& n, std::span<const double> g,
                         std::vector<std::vector<double>>& grads) const {
  auto grad_of = [&](std::size_t idx) -> std::vector<double>* {
    if (!nodes_[idx].requires_grad) return nullptr;
    auto& buf = grads[idx];
    if (buf.empty()) buf.assign(nodes_[idx].value.size(), 0.0);
    return &buf;
  };
  // Accumulate into an input that may be a broadcast scalar.
  auto accumulate = [](std::vector<double>& dst, std::size_t i, double v) {
    if (dst.size() == 1) dst[0] += v;
    else dst[i] += v;
  };

  switch (n.op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::SafeDiv:
    case Op::Atan2: {
      const Node& a = nodes_[n.inputs[0]];
      const Node& b = nodes_[n.inputs[1]];
      auto* ga = grad_of(n.inputs[0]);
      auto* gb = grad_of(n.inputs[1]);
      const bool sa = a.value.size() == 1, sb = b.value.size() == 1;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double x = a.value[sa ? 0 : i], y = b.value[sb ? 0 : i];
        double da = 0.0, db = 0.0;
        switch (n.op) {
          case Op::Add: da = 1.0; db = 1.0; break;
          case Op::Sub: da = 1.0; db = -1.0; break;
          case Op::Mul: da = y; db = x; break;
          case Op::Div: da = 1.0 / y; db = -x / (y * y); break;
          case Op::SafeDiv: {
            const double d = y + kSafeDivEpsilon;
            da = 1.0 / d;
            db = -x / (d * d);
            break;
          }
          default: {
            const double r2 = x * x + y * y;
            if (r2 > 0.0) {
              da = y / r2;
              db = -x / r2;
            }
            break;
          }
        }
        if (ga) accumulate(*ga, i, gi * da);
        if (gb) accumulate(*gb, i, gi * db);
      }
      break;
    }
    case Op::Sin:
    case Op::Abs:
    case Op::Relu:
    case Op::Square:
    case Op::Sqrt:
    case Op::Exp:
    case Op::Log: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = a.value[i];
        double d = 0.0;
        switch (n.op) {
          case Op::Sin: d = std::cos(x); break;
          case Op::Abs: d = sgn(x); break;
          case Op::Relu: d = x > 0.0 ? 1.0 : 0.0; break;
          case Op::Square: d = 2.0 * x; break;
          case Op::Sqrt: d = n.value[i] > 0.0 ? 0.5 / n.value[i] : 0.0; break;
          case Op::Exp: d = n.value[i]; break;
          default: d = 1.0 / x; break;
        }
        (*ga)[i] += g[i] * d;
      }
      break;
    }
    case Op::Scale:
    case Op::Offset:
    case Op::Clamp: {
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      const double f = n.op == Op::Scale ? n.p0 : 1.0;
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += f * g[i];
      break;
    }
    case Op::WrapPeriod: {
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      break;
    }
    case Op::Sum:
    case Op::Mean:
    case Op::L1Norm:
    case Op::L2Norm: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      const double g0 = g[0];
      const double count = static_cast<double>(a.value.size());
      const double norm = n.value[0];
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        double d = 1.0;
        if (n.op == Op::Mean) d = 1.0 / count;
        else if (n.op == Op::L1Norm) d = sgn(a.value[i]);
        else if (n.op == Op::L2Norm) d = norm > 0.0 ? a.value[i] / norm : 0.0;
        (*ga)[i] += g0 * d;
      }
      break;
    }
    case Op::Conv2d: {
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      const int h = n.shape.height, w = n.shape.width, c = n.shape.channels;
      if (c == 1) {
        imgcore::convolve_plane_adjoint(g, *ga, h, w, *n.kernel, n.padding);
      } else {
        const std::size_t np = static_cast<std::size_t>(h) * w;
        std::vector<double> plane(np), acc(np);
        for (int ch = 0; ch < c; ++ch) {
          for (std::size_t p = 0; p < np; ++p) plane[p] = g[p * c + ch];
          std::fill(acc.begin(), acc.end(), 0.0);
          imgcore::convolve_plane_adjoint(plane, acc, h, w, *n.kernel, n.padding);
          for (std::size_t p = 0; p < np; ++p) (*ga)[p * c + ch] += acc[p];
        }
      }
      break;
    }
    case Op::Fft2:
    case Op::Ifft2: {
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      // fft2 = F, adjoint F^H = N * ifft2. ifft2 = F^H / N, adjoint F / N = fft2 / N.
      std::vector<double> buf(g.begin(), g.end());
      const double count = static_cast<double>(n.shape.height) * n.shape.width;
      imgcore::dft_inplace(as_complex(buf), n.shape.height, n.shape.width, n.op == Op::Fft2);
      const double f = n.op == Op::Fft2 ? count : 1.0 / count;
      const Node& a = nodes_[n.inputs[0]];
      if (a.shape.channels == 1) {
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += f * buf[2 * i];
      } else {
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += f * buf[i];
      }
      break;
    }
    case Op::ComplexAbs: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double m = n.value[i];
        if (m == 0.0) continue;
        (*ga)[2 * i] += g[i] * a.value[2 * i] / m;
        (*ga)[2 * i + 1] += g[i] * a.value[2 * i + 1] / m;
      }
      break;
    }
    case Op::ComplexFilter: {
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      for (std::size_t i = 0; i < n.filter->size(); ++i) {
        const std::complex<double> gz(g[2 * i], g[2 * i + 1]);
        const std::complex<double> r = std::conj((*n.filter)[i]) * gz;
        (*ga)[2 * i] += r.real();
        (*ga)[2 * i + 1] += r.imag();
      }
      break;
    }
    case Op::MakeComplex: {
      auto* gre = grad_of(n.inputs[0]);
      auto* gim = grad_of(n.inputs[1]);
      const std::size_t np = g.size() / 2;
      for (std::size_t i = 0; i < np; ++i) {
        if (gre) (*gre)[i] += g[2 * i];
        if (gim) (*gim)[i] += g[2 * i + 1];
      }
      break;
    }
    case Op::RealPart:
    case Op::ImagPart: {
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      const std::size_t off = n.op == Op::RealPart ? 0 : 1;
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[2 * i + off] += g[i];
      break;
    }
    case Op::Luminance: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      if (a.shape.channels == 1) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      } else {
        for (std::size_t p = 0; p < g.size(); ++p) {
          (*ga)[3 * p] += imgcore::kLumaR * g[p];
          (*ga)[3 * p + 1] += imgcore::kLumaG * g[p];
          (*ga)[3 * p + 2] += imgcore::kLumaB * g[p];
        }
      }
      break;
    }
    case Op::Resize: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      auto rows = imgcore::bilinear_axis_plan(a.shape.height, n.shape.height);
      auto cols = imgcore::bilinear_axis_plan(a.shape.width, n.shape.width);
      const int c = a.shape.channels, iw = a.shape.width;
      auto& dst = *ga;
      for (int i = 0; i < n.shape.height; ++i)
        for (int j = 0; j < n.shape.width; ++j)
          for (int ch = 0; ch < c; ++ch) {
            const double gi = g[(static_cast<std::size_t>(i) * n.shape.width + j) * c + ch];
            if (gi == 0.0) continue;
            const auto& rt = rows[i];
            const auto& ct = cols[j];
            auto add = [&](int r, int q, double wgt) { dst[(static_cast<std::size_t>(r) * iw + q) * c + ch] += wgt * gi; };
            add(rt.lo, ct.lo, (1 - rt.weight_hi) * (1 - ct.weight_hi));
            add(rt.lo, ct.hi, (1 - rt.weight_hi) * ct.weight_hi);
            add(rt.hi, ct.lo, rt.weight_hi * (1 - ct.weight_hi));
            add(rt.hi, ct.hi, rt.weight_hi * ct.weight_hi);
          }
      break;
    }
    case Op::Crop: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      const int c = n.shape.channels;
      for (int i = 0; i < n.shape.height; ++i)
        for (int j = 0; j < n.shape.width; ++j)
          for (int ch = 0; ch < c; ++ch)
            (*ga)[(static_cast<std::size_t>(n.i0 + i) * a.shape.width + n.i1 + j) * c + ch] +=
                g[(static_cast<std::size_t>(i) * n.shape.width + j) * c + ch];
      break;
    }
    case Op::PadReplicate: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      const int c = n.shape.channels, ih = a.shape.height, iw = a.shape.width;
      for (int i = 0; i < n.shape.height; ++i) {
        const int si = std::clamp(i - n.i0, 0, ih - 1);
        for (int j = 0; j < n.shape.width; ++j) {
          const int sj = std::clamp(j - n.i1, 0, iw - 1);
          for (int ch = 0; ch < c; ++ch)
            (*ga)[(static_cast<std::size_t>(si) * iw + sj) * c + ch] +=
                g[(static_cast<std::size_t>(i) * n.shape.width + j) * c + ch];
        }
      }
      break;
    }
    case Op::Subsample: {
      const Node& a = nodes_[n.inputs[0]];
      auto* ga = grad_of(n.inputs[0]);
      if (!ga) break;
      const int c = n.shape.channels, step = n.i0;
      for (int i = 0; i < n.shape.height; ++i)
        for (int j = 0; j < n.shape.width; ++j)
          for (int ch = 0; ch < c; ++ch)
            (*ga)[(static_cast<std::size_t>(i * step) * a.shape.width + j * step) * c + ch] +=
                g[(static_cast<std::size_t>(i) * n.shape.width + j) * c + ch];
      break;
    }
    case Op::Concat: {
      const std::size_t np = static_cast<std::size_t>(n.shape.height) * n.shape.width;
      const int total = n.shape.channels;
      int off = 0;
      for (std::size_t k : n.inputs) {
        const int c = nodes_[k].shape.channels;
        if (auto* gk = grad_of(k)) {
          for (std::size_t p = 0; p < np; ++p)
            for (int ch = 0; ch < c; ++ch) (*gk)[p * c + ch] += g[p * total + off + ch];
        }
        off += c;
      }
      break;
    }
    default:
      break;
  }
}

std::vector<std::int64_t> Tape::kink_signature() const {
  std::vector<std::int64_t> sig;
  for (const Node& n : nodes_) {
    switch (n.op) {
      case Op::Abs:
      case Op::Relu:
      case Op::L1Norm:
        for (double x : nodes_[n.inputs[0]].value) sig.push_back(static_cast<std::int64_t>(sgn(x)));
        break;
      case Op::Atan2: {
        const auto& y = nodes_[n.inputs[0]].value;
        const auto& x = nodes_[n.inputs[1]].value;
        const std::size_t size = n.value.size();
        for (std::size_t i = 0; i < size; ++i) {
          const double yi = y[y.size() == 1 ? 0 : i], xi = x[x.size() == 1 ? 0 : i];
          sig.push_back(xi < 0.0 ? static_cast<std::int64_t>(sgn(yi)) : 2);
        }
        break;
      }
      case Op::WrapPeriod:
        for (double x : nodes_[n.inputs[0]].value)
          sig.push_back(static_cast<std::int64_t>(std::floor(x / n.p0)));
        break;
      default:
        break;
    }
  }
  return sig;
}

// ---------------------------------------------------------------- finite differences

namespace {

struct Evaluation {
  double value;
  std::vector<std::int64_t> signature;
};

Evaluation evaluate(const ScalarFunction& f, const Tensor& x, bool want_signature) {
  Tape tape;
  Var in = tape.leaf(x);
  Var out = f(tape, in);
  Evaluation e{tape.scalar_value(out), {}};
  if (want_signature) e.signature = tape.kink_signature();
  return e;
}

}  // namespace

namespace {

struct Reference {
  Tensor grad;
  std::vector<std::int64_t> signature;
  double floor = 0.0;
};

Reference reference(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
  Reference ref;
  Tape tape;
  Var in = tape.leaf(x);
  Var out = f(tape, in);
  ref.grad = tape.backward(out, in);
  ref.signature = tape.kink_signature();
  double gmax = 0.0;
  for (double v : ref.grad.data) gmax = std::max(gmax, std::abs(v));
  ref.floor = std::max(1e-4 * gmax, 1e-300);
  return ref;
}

void check_coordinate(const ScalarFunction& f, const Reference& ref, Tensor& probe, std::size_t c, double h,
                      double kink_radius, GradCheck& report) {
  if (c >= probe.data.size()) throw ContractError("finite difference coordinate out of range");
  const double orig = probe.data[c];
  bool kinked = false;
  for (double sign : {1.0, -1.0}) {
    probe.data[c] = orig + sign * kink_radius * h;
    if (evaluate(f, probe, true).signature != ref.signature) {
      kinked = true;
      break;
    }
  }
  if (kinked) {
    probe.data[c] = orig;
    ++report.excluded;
    return;
  }
  probe.data[c] = orig + h;
  const double fp = evaluate(f, probe, false).value;
  probe.data[c] = orig - h;
  const double fm = evaluate(f, probe, false).value;
  probe.data[c] = orig;
  const double fd = (fp - fm) / (2.0 * h);
  const double ad = ref.grad.data[c];
  const double denom = std::max({std::abs(ad), std::abs(fd), ref.floor});
  report.max_rel_error = std::max(report.max_rel_error, std::abs(ad - fd) / denom);
  ++report.checked;
}

}  // namespace

GradCheck finite_difference_check(const ScalarFunction& f, const Tensor& x, double h,
                                  std::span<const std::size_t> coords, double kink_radius) {
  const Reference ref = reference(f, x, h);
  GradCheck report;
  Tensor probe = x;
  for (std::size_t c : coords) check_coordinate(f, ref, probe, c, h, kink_radius, report);
  return report;
}

GradCheck finite_difference_check(const ScalarFunction& f, const Tensor& x, double h, int samples,
                                  std::uint64_t seed, double kink_radius) {
  const Reference ref = reference(f, x, h);
  std::mt19937_64 rng(seed);
  GradCheck report;
  Tensor probe = x;
  const int max_attempts = std::max(samples * 20, 1);
  int attempts = 0;
  std::unordered_set<std::size_t> seen;
  while (report.checked < samples && attempts < max_attempts && seen.size() < x.data.size()) {
    const std::size_t c = rng() % x.data.size();
    if (!seen.insert(c).second) continue;
    ++attempts;
    check_coordinate(f, ref, probe, c, h, kink_radius, report);
  }
  return report;
}

}  // namespace fingersafe::ad
