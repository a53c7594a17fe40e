#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fingersafe/errors.hpp"
#include "fingersafe/orientation.hpp"
#include "support.hpp"

using namespace fingersafe;
using imgcore::Image;
using orientation::angular_distance;
using orientation::estimate_orientation;
using orientation::mean_angular_error;
using orientation::orientation_distortion_loss;
using testing::random_image;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

// Sinusoidal ridges whose intensity gradient points along `normal` (radians,
// x right, y down).
Image ridges(int size, double normal, double period = 8.0) {
  Image x(size, size, 1);
  const double c = std::cos(normal), s = std::sin(normal);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) x.at(i, j) = 0.5 + 0.5 * std::sin(2.0 * kPi * (j * c + i * s) / period);
  return x;
}

Image constant_field(int h, int w, double v) { return Image(h, w, 1, v); }

Image smooth_random(int size, std::uint64_t seed) {
  return imgcore::conv2d(random_image(size, size, 1, seed), imgcore::gaussian_kernel(5));
}

// Straight-line evaluation: brute-force convolutions, then the doubled-angle formula.
Image oracle_orientation(const Image& x) {
  auto [kx, ky] = imgcore::gaussian_derivative_kernels(orientation::kDerivativeSize, orientation::kDerivativeSigma);
  const Image gx = testing::brute_conv(x, kx, true);
  const Image gy = testing::brute_conv(x, ky, true);
  Image num(x.height(), x.width(), 1), den(x.height(), x.width(), 1);
  for (std::size_t p = 0; p < x.size(); ++p) {
    num.data()[p] = 2.0 * gx.data()[p] * gy.data()[p];
    den.data()[p] = gx.data()[p] * gx.data()[p] - gy.data()[p] * gy.data()[p];
  }
  const auto g = imgcore::gaussian_kernel(orientation::kSmoothingSize);
  const Image sn = testing::brute_conv(num, g, true);
  const Image sd = testing::brute_conv(den, g, true);
  Image out(x.height(), x.width(), 1);
  for (std::size_t p = 0; p < x.size(); ++p) {
    double a = 0.5 * std::atan2(sn.data()[p], sd.data()[p]) + kPi / 2;
    a = std::fmod(a, kPi);
    if (a < 0) a += kPi;
    out.data()[p] = a;
  }
  return out;
}

}  // namespace

TEST_CASE("constant image resolves to pi/2") {
  const Image phi = estimate_orientation(constant_field(20, 24, 0.37));
  for (double v : phi.data()) CHECK(v == doctest::Approx(kPi / 2).epsilon(1e-12));
  const Image zero = estimate_orientation(constant_field(8, 8, 0.0));
  for (double v : zero.data()) CHECK(v == doctest::Approx(kPi / 2));
}

TEST_CASE("values lie in [0, pi) and match the brute-force estimator") {
  const Image x = random_image(14, 12, 1, 3);
  const Image phi = estimate_orientation(x);
  const Image ref = oracle_orientation(x);
  for (std::size_t p = 0; p < phi.size(); ++p) {
    CHECK(phi.data()[p] >= 0.0);
    CHECK(phi.data()[p] < kPi);
    CHECK(angular_distance(phi.data()[p], ref.data()[p]) <= 1e-9);
  }
}

TEST_CASE("vertical ridges give pi/2 in the interior") {
  Image x(96, 96, 1);
  for (int i = 0; i < 96; ++i)
    for (int j = 0; j < 96; ++j) x.at(i, j) = 0.5 + 0.5 * std::sin(2.0 * kPi * j / 8.0);
  const Image phi = estimate_orientation(x);
  CHECK(mean_angular_error(phi, constant_field(96, 96, kPi / 2), 20) <= 3.0 * kDeg);
}

TEST_CASE("rotated analytic ridges recover the ridge direction") {
  for (int deg = 0; deg < 180; deg += 30) {
    CAPTURE(deg);
    const double theta = deg * kDeg;
    const Image phi = estimate_orientation(ridges(96, theta));
    const double expected = std::fmod(kPi / 2 + theta, kPi);
    CHECK(mean_angular_error(phi, constant_field(96, 96, expected), 20) <= 3.0 * kDeg);
  }
}

TEST_CASE("rotating the image rotates the field") {
  const Image x = ridges(128, 0.0);
  const Image phi = estimate_orientation(x);
  for (double deg : {30.0, -45.0, 70.0}) {
    CAPTURE(deg);
    const Image rotated = imgcore::warp_rigid(x, deg * kDeg, 0.0, 0.0, 0.5);
    const Image phi_rot = estimate_orientation(rotated);
    Image shifted(phi.height(), phi.width(), 1);
    for (std::size_t p = 0; p < phi.size(); ++p) shifted.data()[p] = phi.data()[p] + deg * kDeg;
    CHECK(mean_angular_error(phi_rot, shifted, 40) <= 3.0 * kDeg);
  }
}

TEST_CASE("affine gray-level changes leave the field unchanged") {
  const Image x = smooth_random(40, 5);
  const Image phi = estimate_orientation(x);
  for (auto [a, b] : {std::pair{2.0, 0.0}, std::pair{0.5, 0.25}, std::pair{3.7, -0.4}}) {
    Image y = x;
    for (double& v : y.data()) v = a * v + b;
    const Image phi_y = estimate_orientation(y);
    double worst = 0.0;
    for (std::size_t p = 0; p < phi.size(); ++p)
      worst = std::max(worst, angular_distance(phi.data()[p], phi_y.data()[p]));
    CAPTURE(a);
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("multi-channel input is a shape error") {
  CHECK_THROWS_AS(estimate_orientation(Image(8, 8, 3)), ShapeError);
}

TEST_CASE("distortion loss: identity, quarter turn, brute force, bounds") {
  const Image phi = random_image(4, 4, 1, 7, 0.0, kPi);
  CHECK(orientation_distortion_loss(phi, phi) == 0.0);

  Image quarter = phi;
  for (double& v : quarter.data()) v += kPi / 2;
  CHECK(orientation_distortion_loss(quarter, phi) == doctest::Approx(-1.0).epsilon(1e-12));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image a = random_image(4, 4, 1, 100 + seed, 0.0, kPi);
    const Image b = random_image(4, 4, 1, 200 + seed, 0.0, kPi);
    double acc = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) acc += std::abs(std::sin(std::abs(a.at(i, j) - b.at(i, j))));
    const double loss = orientation_distortion_loss(a, b);
    CHECK(loss == doctest::Approx(-acc / 16.0).epsilon(1e-12));
    CHECK(loss <= 0.0);
    CHECK(loss >= -1.0);
  }
  CHECK_THROWS_AS(orientation_distortion_loss(Image(4, 4, 1), Image(4, 5, 1)), ContractError);
}

TEST_CASE("taped loss matches its value and central differences") {
  const Image clean = smooth_random(24, 9);
  const Image start = random_image(24, 24, 1, 10);
  const Image phi = estimate_orientation(clean);

  ad::Tape tape;
  ad::Var x = tape.leaf(start);
  ad::Var loss = orientation_distortion_loss(tape, estimate_orientation(tape, x), tape.constant(phi));
  CHECK(tape.value(loss).data[0] ==
        doctest::Approx(orientation_distortion_loss(estimate_orientation(start), phi)).epsilon(1e-12));

  const ad::ScalarFunction f = [&](ad::Tape& t, ad::Var v) {
    return orientation_distortion_loss(t, estimate_orientation(t, v), t.constant(phi));
  };
  const ad::GradCheck g = ad::finite_difference_check(f, ad::Tensor::from_image(start), 1e-5, 40, 11);
  CHECK(g.checked == 40);
  CHECK(g.max_rel_error <= 1e-4);
}
