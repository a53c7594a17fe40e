#include "fingersafe/perception.hpp"

#include <cmath>

#include "fingersafe/errors.hpp"

namespace fingersafe::perception {

using imgcore::Image;
using imgcore::Kernel;

namespace {

std::vector<double> radial_taps(int size, double radius, double gain) {
  std::vector<double> taps(size);
  const int r = size / 2;
  for (int i = -r; i <= r; ++i) {
    const double t = i / radius;
    taps[i + r] = gain * std::exp(-t * t);
  }
  return taps;
}

struct Kernels {
  std::shared_ptr<const Kernel> center, surround, box, smooth;
};

const Kernels& kernels() {
  static const Kernels k = [] {
    const double ratio = kCenterRadius / kSurroundRadius;
    auto c = Kernel::separable(radial_taps(kCenterSize, kCenterRadius, 1.0), radial_taps(kCenterSize, kCenterRadius, 1.0));
    // exp(-(i/r)^2 - (j/r)^2) factors into a column and a row; the gain sits on one of them.
    auto s = Kernel::separable(radial_taps(kSurroundSize, kSurroundRadius, kSurroundGain * ratio * ratio),
                               radial_taps(kSurroundSize, kSurroundRadius, 1.0));
    return Kernels{std::make_shared<const Kernel>(std::move(c)), std::make_shared<const Kernel>(std::move(s)),
                   std::make_shared<const Kernel>(imgcore::box_kernel(kResidualBoxSize)),
                   std::make_shared<const Kernel>(imgcore::gaussian_kernel(kSaliencySmoothSize))};
  }();
  return k;
}

void require_gray(const ad::Var& x, const char* what) {
  if (x.shape.channels != 1) throw ShapeError(std::string(what) + " expects a single-channel image");
}

}  // namespace

const Kernel& center_kernel() { return *kernels().center; }
const Kernel& surround_kernel() { return *kernels().surround; }

ad::Var local_contrast(ad::Tape& tape, ad::Var x) {
  require_gray(x, "local_contrast");
  const Kernels& k = kernels();
  ad::Var c = tape.conv2d(x, k.center);
  ad::Var s = tape.conv2d(x, k.surround);
  return tape.safe_div(tape.sub(c, s), tape.add(c, s));
}

ContrastMap local_contrast(const Image& x) {
  ad::Tape tape;
  return tape.value(local_contrast(tape, tape.constant(x))).to_image();
}

ad::Var spectral_saliency(ad::Tape& tape, ad::Var x) {
  require_gray(x, "spectral_saliency");
  const Kernels& k = kernels();
  ad::Var f = tape.fft2(x);
  ad::Var amplitude = tape.complex_abs(f);
  ad::Var log_amp = tape.log(tape.offset(amplitude, kLogEpsilon));
  ad::Var residual = tape.sub(log_amp, tape.conv2d(log_amp, k.box));
  ad::Var gain = tape.exp(residual);
  // exp(R) * e^{iP}, with the unit phasor taken as f / |f|.
  ad::Var re = tape.mul(gain, tape.safe_div(tape.real(f), amplitude));
  ad::Var im = tape.mul(gain, tape.safe_div(tape.imag(f), amplitude));
  ad::Var back = tape.ifft2(tape.make_complex(re, im));
  ad::Var energy = tape.add(tape.square(tape.real(back)), tape.square(tape.imag(back)));
  return tape.conv2d(energy, k.smooth);
}

SaliencyMap spectral_saliency(const Image& x) {
  ad::Tape tape;
  return tape.value(spectral_saliency(tape, tape.constant(x))).to_image();
}

ad::Var contrast_suppression_loss(ad::Tape& tape, ad::Var omega_adv, ad::Var omega, ad::Var psi_adv) {
  if (!(omega_adv.shape == omega.shape) || !(omega.shape == psi_adv.shape))
    throw ContractError("contrast maps and saliency differ in shape");
  ad::Var weight = tape.detach(psi_adv);
  return tape.mean(tape.relu(tape.mul(tape.sub(omega_adv, omega), weight)));
}

double contrast_suppression_loss(const ContrastMap& omega_adv, const ContrastMap& omega, const SaliencyMap& psi_adv) {
  if (!omega_adv.same_shape(omega) || !omega.same_shape(psi_adv))
    throw ContractError("contrast maps and saliency differ in shape");
  auto a = omega_adv.data();
  auto b = omega.data();
  auto w = psi_adv.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::max(0.0, (a[i] - b[i]) * w[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace fingersafe::perception
