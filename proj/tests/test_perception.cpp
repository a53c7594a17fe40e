#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "fingersafe/errors.hpp"
#include "fingersafe/perception.hpp"
#include "support.hpp"

using namespace fingersafe;
using imgcore::Image;
using perception::contrast_suppression_loss;
using perception::local_contrast;
using perception::spectral_saliency;
using testing::random_image;

namespace {

constexpr double kPi = std::numbers::pi;
using cplx = std::complex<double>;
using Grid = std::vector<cplx>;

Grid naive_dft(const Grid& in, int h, int w, bool inverse) {
  Grid out(in.size());
  const double sign = inverse ? 1.0 : -1.0;
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      cplx acc = 0.0;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          acc += in[i * w + j] * std::polar(1.0, sign * 2.0 * kPi * (double(u * i) / h + double(v * j) / w));
      out[u * w + v] = inverse ? acc / double(h * w) : acc;
    }
  return out;
}

Image saliency_oracle(const Image& x) {
  const int h = x.height(), w = x.width();
  Grid g(x.size());
  for (std::size_t p = 0; p < x.size(); ++p) g[p] = x.data()[p];
  const Grid f = naive_dft(g, h, w, false);

  Image log_amp(h, w, 1);
  for (std::size_t p = 0; p < f.size(); ++p) log_amp.data()[p] = std::log(std::abs(f[p]) + 1e-8);
  const Image blurred = testing::brute_conv(log_amp, imgcore::box_kernel(3), true);

  Grid shaped(f.size());
  for (std::size_t p = 0; p < f.size(); ++p)
    shaped[p] = std::polar(std::exp(log_amp.data()[p] - blurred.data()[p]), std::arg(f[p]));
  const Grid back = naive_dft(shaped, h, w, true);

  Image energy(h, w, 1);
  for (std::size_t p = 0; p < back.size(); ++p) energy.data()[p] = std::norm(back[p]);
  return testing::brute_conv(energy, imgcore::gaussian_kernel(9), true);
}

double kernel_sum(int size, double radius, double gain) {
  const int r = size / 2;
  double s = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) s += gain * std::exp(-(i / radius) * (i / radius) - (j / radius) * (j / radius));
  return s;
}

}  // namespace

TEST_CASE("receptive field parameters") {
  CHECK(perception::kCenterRadius == 2.0);
  CHECK(perception::kSurroundRadius == 4.0);
  CHECK(perception::kSurroundGain == 0.85);
  CHECK(perception::center_kernel().size() == 13);
  CHECK(perception::surround_kernel().size() == 25);
  CHECK(perception::kResidualBoxSize == 3);
  CHECK(perception::kSaliencySmoothSize == 9);
  CHECK(perception::center_kernel()(0, 0) == doctest::Approx(1.0));
  CHECK(perception::surround_kernel()(0, 0) == doctest::Approx(0.85 * 0.25));
  CHECK(perception::center_kernel()(2, -2) == doctest::Approx(std::exp(-2.0)));
}

TEST_CASE("constant image contrast equals the kernel-sum ratio") {
  const double c = kernel_sum(13, 2.0, 1.0);
  const double s = kernel_sum(25, 4.0, 0.85 * 0.25);
  const double expected = (c - s) / (c + s);
  for (double level : {0.05, 0.5, 1.0}) {
    const Image omega = local_contrast(Image(30, 27, 1, level));
    for (double v : omega.data()) CHECK(v == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("zero image has zero contrast") {
  const Image omega = local_contrast(Image(16, 16, 1, 0.0));
  for (double v : omega.data()) CHECK(v == 0.0);
}

TEST_CASE("contrast matches a brute-force ratio and stays within [-1, 1]") {
  const Image x = random_image(20, 18, 1, 4);
  const Image omega = local_contrast(x);
  const Image gc = testing::brute_conv(x, perception::center_kernel(), true);
  const Image gs = testing::brute_conv(x, perception::surround_kernel(), true);
  for (std::size_t p = 0; p < x.size(); ++p) {
    const double ref = (gc.data()[p] - gs.data()[p]) / (gc.data()[p] + gs.data()[p] + 1e-8);
    CHECK(omega.data()[p] == doctest::Approx(ref).epsilon(1e-10));
    CHECK(std::abs(omega.data()[p]) <= 1.0 + 1e-6);
  }
}

TEST_CASE("contrast is invariant to positive scaling") {
  Image x = random_image(24, 24, 1, 5, 0.1, 1.0);
  const Image base = local_contrast(x);
  for (double a : {1.0, 2.0, 10.0, 1000.0}) {
    Image y = x;
    for (double& v : y.data()) v *= a;
    CAPTURE(a);
    CHECK(testing::max_diff(local_contrast(y), base) <= 1e-6);
  }
}

TEST_CASE("saliency matches the straight-line spectral residual") {
  const Image x = random_image(32, 32, 1, 6);
  const Image psi = spectral_saliency(x);
  const Image ref = saliency_oracle(x);
  double worst = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p)
    worst = std::max(worst, std::abs(psi.data()[p] - ref.data()[p]) / std::abs(ref.data()[p]));
  CHECK(worst <= 1e-8);
}

TEST_CASE("saliency is nonnegative") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image psi = spectral_saliency(random_image(24, 20, 1, 40 + seed));
    for (double v : psi.data()) CHECK(v >= 0.0);
  }
  const Image zero = spectral_saliency(Image(8, 8, 1, 0.0));
  for (double v : zero.data()) CHECK(v >= 0.0);
}

TEST_CASE("multi-channel input is a shape error") {
  CHECK_THROWS_AS(local_contrast(Image(8, 8, 3)), ShapeError);
  CHECK_THROWS_AS(spectral_saliency(Image(8, 8, 3)), ShapeError);
}

TEST_CASE("suppression loss: identity, decreases, brute force, shapes") {
  const Image omega = random_image(4, 4, 1, 9, -1.0, 1.0);
  const Image psi = random_image(4, 4, 1, 10, 0.0, 3.0);
  CHECK(contrast_suppression_loss(omega, omega, psi) == 0.0);

  Image lower = omega;
  for (double& v : lower.data()) v -= 0.3;
  CHECK(contrast_suppression_loss(lower, omega, psi) == 0.0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image a = random_image(4, 4, 1, 300 + seed, -1.0, 1.0);
    const Image b = random_image(4, 4, 1, 400 + seed, -1.0, 1.0);
    const Image w = random_image(4, 4, 1, 500 + seed, 0.0, 2.0);
    double acc = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double d = (a.at(i, j) - b.at(i, j)) * w.at(i, j);
        if (d > 0) acc += d;
      }
    const double loss = contrast_suppression_loss(a, b, w);
    CHECK(loss == doctest::Approx(acc / 16.0).epsilon(1e-12));
    CHECK(loss >= 0.0);
  }
  CHECK_THROWS_AS(contrast_suppression_loss(Image(4, 4, 1), Image(4, 4, 1), Image(4, 5, 1)), ContractError);
  CHECK_THROWS_AS(contrast_suppression_loss(Image(3, 4, 1), Image(4, 4, 1), Image(4, 4, 1)), ContractError);
}

TEST_CASE("suppression loss gradient treats saliency as a constant weight") {
  const Image a = random_image(5, 5, 1, 11, -1.0, 1.0);
  const Image b = random_image(5, 5, 1, 12, -1.0, 1.0);
  const Image w = random_image(5, 5, 1, 13, 0.1, 2.0);
  ad::Tape tape;
  ad::Var va = tape.leaf(a);
  ad::Var vw = tape.leaf(w);
  ad::Var loss = contrast_suppression_loss(tape, va, tape.constant(b), vw);
  CHECK(tape.value(loss).data[0] == doctest::Approx(contrast_suppression_loss(a, b, w)).epsilon(1e-12));
  const ad::Tensor ga = tape.backward(loss, va);
  const ad::Tensor gw = tape.backward(loss, vw);
  for (std::size_t p = 0; p < a.size(); ++p) {
    const double d = (a.data()[p] - b.data()[p]) * w.data()[p];
    CHECK(ga.data[p] == doctest::Approx(d > 0 ? w.data()[p] / 25.0 : 0.0));
    CHECK(gw.data[p] == 0.0);
  }
}

TEST_CASE("taped contrast and saliency match central differences") {
  const ad::Tensor x = ad::Tensor::from_image(random_image(16, 16, 1, 14, 0.1, 1.0));
  const ad::ScalarFunction contrast = [](ad::Tape& t, ad::Var v) {
    ad::Var omega = local_contrast(t, v);
    return t.sum(t.mul(omega, t.constant(random_image(16, 16, 1, 15, -1.0, 1.0))));
  };
  const ad::GradCheck gc = ad::finite_difference_check(contrast, x, 1e-5, 40, 16);
  CHECK(gc.checked == 40);
  CHECK(gc.max_rel_error <= 1e-5);

  const ad::ScalarFunction saliency = [](ad::Tape& t, ad::Var v) { return t.mean(spectral_saliency(t, v)); };
  const ad::GradCheck gs = ad::finite_difference_check(saliency, x, 1e-5, 40, 17);
  CHECK(gs.checked == 40);
  CHECK(gs.max_rel_error <= 1e-4);
}
