#include "fingersafe/orientation.hpp"

#include <cmath>
#include <numbers>

#include "fingersafe/errors.hpp"

namespace fingersafe::orientation {

using imgcore::Image;
using imgcore::Kernel;

namespace {

struct Kernels {
  std::shared_ptr<const Kernel> dx, dy, smooth;
};

const Kernels& kernels() {
  static const Kernels k = [] {
    auto [gx, gy] = imgcore::gaussian_derivative_kernels(kDerivativeSize, kDerivativeSigma);
    return Kernels{std::make_shared<const Kernel>(std::move(gx)), std::make_shared<const Kernel>(std::move(gy)),
                   std::make_shared<const Kernel>(imgcore::gaussian_kernel(kSmoothingSize))};
  }();
  return k;
}

}  // namespace

ad::Var estimate_orientation(ad::Tape& tape, ad::Var x) {
  if (x.shape.channels != 1) throw ShapeError("estimate_orientation expects a single-channel image");
  const Kernels& k = kernels();
  ad::Var gx = tape.conv2d(x, k.dx);
  ad::Var gy = tape.conv2d(x, k.dy);
  ad::Var num = tape.conv2d(tape.scale(tape.mul(gx, gy), 2.0), k.smooth);
  ad::Var den = tape.conv2d(tape.sub(tape.square(gx), tape.square(gy)), k.smooth);
  ad::Var half = tape.scale(tape.atan2(num, den), 0.5);
  return tape.wrap(tape.offset(half, std::numbers::pi / 2), std::numbers::pi);
}

OrientationField estimate_orientation(const Image& x) {
  if (x.channels() != 1) throw ShapeError("estimate_orientation expects a single-channel image");
  ad::Tape tape;
  ad::Var in = tape.constant(x);
  return tape.value(estimate_orientation(tape, in)).to_image();
}

ad::Var orientation_distortion_loss(ad::Tape& tape, ad::Var phi_adv, ad::Var phi) {
  if (!(phi_adv.shape == phi.shape)) throw ContractError("orientation fields differ in shape");
  ad::Var d = tape.abs(tape.sin(tape.abs(tape.sub(phi_adv, phi))));
  return tape.scale(tape.mean(d), -1.0);
}

double orientation_distortion_loss(const OrientationField& phi_adv, const OrientationField& phi) {
  if (!phi_adv.same_shape(phi)) throw ContractError("orientation fields differ in shape");
  double acc = 0.0;
  auto a = phi_adv.data();
  auto b = phi.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(std::sin(std::abs(a[i] - b[i])));
  return -acc / static_cast<double>(a.size());
}

double angular_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), std::numbers::pi);
  return std::min(d, std::numbers::pi - d);
}

double mean_angular_error(const OrientationField& a, const OrientationField& b, int margin) {
  if (!a.same_shape(b)) throw ContractError("orientation fields differ in shape");
  double acc = 0.0;
  std::size_t n = 0;
  for (int i = margin; i < a.height() - margin; ++i)
    for (int j = margin; j < a.width() - margin; ++j) {
      acc += angular_distance(a.at(i, j), b.at(i, j));
      ++n;
    }
  if (n == 0) throw ContractError("margin leaves no interior pixels");
  return acc / static_cast<double>(n);
}

}  // namespace fingersafe::orientation
