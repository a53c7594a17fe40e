#include "fingersafe/scatnet.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "fingersafe/errors.hpp"

namespace fingersafe::scatnet {

using imgcore::Image;
using Spectrum = ad::ComplexSpectrum;

namespace {

constexpr double kSigma0 = 0.8;
constexpr double kXi0 = 3.0 * std::numbers::pi / 4.0;
constexpr double kSlant = 0.5;

// Angular frequency of DFT bin k on an n-point grid, in [-pi, pi).
double bin_frequency(int k, int n) {
  const int s = k < (n + 1) / 2 ? k : k - n;
  return 2.0 * std::numbers::pi * s / n;
}

// Anisotropic Gaussian bump in frequency, periodized over the neighbouring
// 2*pi replicas. Axis u points along theta.
template <typename F>
Spectrum periodized(int n, F&& bump) {
  Spectrum out(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
          acc += bump(bin_frequency(r, n) + 2.0 * std::numbers::pi * a, bin_frequency(c, n) + 2.0 * std::numbers::pi * b);
      out[static_cast<std::size_t>(r) * n + c] = acc;
    }
  return out;
}

Spectrum morlet(int n, double sigma, double xi, double theta) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const double su = sigma, sv = sigma / kSlant;
  // wy is the row frequency, wx the column frequency; theta measured from the x axis.
  auto gabor = [&](double wy, double wx) {
    const double u = wx * ct + wy * st - xi;
    const double v = -wx * st + wy * ct;
    return std::exp(-0.5 * (su * su * u * u + sv * sv * v * v));
  };
  auto envelope = [&](double wy, double wx) {
    const double u = wx * ct + wy * st;
    const double v = -wx * st + wy * ct;
    return std::exp(-0.5 * (su * su * u * u + sv * sv * v * v));
  };
  Spectrum g = periodized(n, gabor);
  Spectrum e = periodized(n, envelope);
  const std::complex<double> kappa = g[0] / e[0];
  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= kappa * e[i];
  g[0] = 0.0;
  return g;
}

Spectrum gaussian_lowpass(int n, double sigma) {
  Spectrum p = periodized(n, [&](double wy, double wx) { return std::exp(-0.5 * sigma * sigma * (wx * wx + wy * wy)); });
  const std::complex<double> dc = p[0];
  for (auto& v : p) v /= dc;
  return p;
}

}  // namespace

ScatteringNetwork::ScatteringNetwork(ScatteringConfig cfg) : cfg_(cfg) {
  if (cfg_.J < 1 || cfg_.L < 1) throw ConfigError("scattering needs J >= 1 and L >= 1");
  const int step = 1 << cfg_.J;
  if (cfg_.input_size < step) throw ConfigError("scattering input smaller than the averaging scale");
  padded_ = ((cfg_.input_size + step) / step + 1) * step;
  while (imgcore::fast_dft_size(padded_) != padded_) padded_ += step;
  pad_ = (padded_ - cfg_.input_size) / 2;
  border_ = 1;

  std::vector<Spectrum> bank;
  for (int j = 0; j < cfg_.J; ++j)
    for (int l = 0; l < cfg_.L; ++l)
      bank.push_back(morlet(padded_, kSigma0 * std::pow(2.0, j), kXi0 / std::pow(2.0, j),
                            std::numbers::pi * l / cfg_.L));

  // Littlewood-Paley sum over +-omega; rescale so the frame bound stays <= 1.
  const int n = padded_;
  double lp_max = 0.0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const std::size_t k = static_cast<std::size_t>(r) * n + c;
      const std::size_t km = static_cast<std::size_t>((n - r) % n) * n + (n - c) % n;
      double lp = 0.0;
      for (const auto& f : bank) lp += 0.5 * (std::norm(f[k]) + std::norm(f[km]));
      lp_max = std::max(lp_max, lp);
    }
  const double gain = lp_max > 1.0 ? 1.0 / std::sqrt(lp_max) : 1.0;
  for (auto& f : bank) {
    for (auto& v : f) v *= gain;
    wavelets_.push_back(std::make_shared<const Spectrum>(std::move(f)));
  }
  lowpass_ = std::make_shared<const Spectrum>(gaussian_lowpass(n, kSigma0 * std::pow(2.0, cfg_.J)));

  auto layout = std::make_shared<Layout>();
  layout->paths.push_back(Path{0});
  for (int j1 = 0; j1 < cfg_.J; ++j1)
    for (int l1 = 0; l1 < cfg_.L; ++l1) layout->paths.push_back(Path{1, j1, l1});
  for (int j1 = 0; j1 < cfg_.J; ++j1)
    for (int l1 = 0; l1 < cfg_.L; ++l1)
      for (int j2 = j1 + 1; j2 < cfg_.J; ++j2)
        for (int l2 = 0; l2 < cfg_.L; ++l2) layout->paths.push_back(Path{2, j1, l1, j2, l2});
  layout->height = layout->width = padded_ / step - 2 * border_;
  layout_ = std::move(layout);
}

ad::Var ScatteringNetwork::average(ad::Tape& tape, ad::Var spectrum) const {
  ad::Var smooth = tape.real(tape.ifft2(tape.complex_filter(spectrum, lowpass_)));
  ad::Var coarse = tape.subsample(smooth, 1 << cfg_.J);
  return tape.crop(coarse, border_, border_, layout_->height, layout_->width);
}

ad::Var ScatteringNetwork::scatter(ad::Tape& tape, ad::Var x) const {
  const int n = cfg_.input_size;
  if (x.shape.height != n || x.shape.width != n || x.shape.channels != 1)
    throw ContractError("scatter expects a single-channel " + std::to_string(n) + "x" + std::to_string(n) + " image");
  const int far = padded_ - n - pad_;
  ad::Var base = tape.fft2(tape.pad_replicate(x, pad_, far, pad_, far));

  std::vector<ad::Var> order1(wavelets_.size());
  std::vector<ad::Var> outputs;
  outputs.reserve(layout_->paths.size());
  outputs.push_back(average(tape, base));
  for (int j1 = 0; j1 < cfg_.J; ++j1)
    for (int l1 = 0; l1 < cfg_.L; ++l1) {
      const std::size_t k = static_cast<std::size_t>(j1) * cfg_.L + l1;
      ad::Var u1 = tape.complex_abs(tape.ifft2(tape.complex_filter(base, wavelets_[k])));
      order1[k] = tape.fft2(u1);
      outputs.push_back(average(tape, order1[k]));
    }
  for (int j1 = 0; j1 < cfg_.J; ++j1)
    for (int l1 = 0; l1 < cfg_.L; ++l1)
      for (int j2 = j1 + 1; j2 < cfg_.J; ++j2)
        for (int l2 = 0; l2 < cfg_.L; ++l2) {
          ad::Var in = order1[static_cast<std::size_t>(j1) * cfg_.L + l1];
          ad::Var u2 = tape.complex_abs(tape.ifft2(tape.complex_filter(in, wavelets_[j2 * cfg_.L + l2])));
          outputs.push_back(average(tape, tape.fft2(u2)));
        }
  return tape.concat(outputs);
}

FeatureVector ScatteringNetwork::scatter(const Image& x) const {
  ad::Tape tape;
  ad::Var out = scatter(tape, tape.constant(x));
  auto data = tape.data(out);
  return FeatureVector{{data.begin(), data.end()}, layout_};
}

ad::Var ScatteringNetwork::features(ad::Tape& tape, ad::Var x) const {
  return scatter(tape, prepare_input(tape, x, cfg_.input_size));
}

FeatureVector ScatteringNetwork::features(const Image& x) const {
  return scatter(prepare_input(x, cfg_.input_size));
}

const ScatteringNetwork& default_network() {
  static const ScatteringNetwork net{};
  return net;
}

Image prepare_input(const Image& x, int size) {
  Image gray = imgcore::to_luminance(x);
  const auto box = imgcore::center_square(gray.height(), gray.width());
  return imgcore::resize_bilinear(imgcore::crop(gray, box.top, box.left, box.height, box.width), size, size);
}

ad::Var prepare_input(ad::Tape& tape, ad::Var x, int size) {
  ad::Var gray = tape.luminance(x);
  const auto box = imgcore::center_square(x.shape.height, x.shape.width);
  if (box.height != x.shape.height || box.width != x.shape.width)
    gray = tape.crop(gray, box.top, box.left, box.height, box.width);
  if (box.height == size && box.width == size) return gray;
  return tape.resize(gray, size, size);
}

namespace {

void check_layouts(const FeatureVector& a, const FeatureVector& b) {
  if (a.values.size() != b.values.size() || !a.layout || !b.layout ||
      a.layout->paths.size() != b.layout->paths.size())
    throw ContractError("feature vectors have different layouts");
}

}  // namespace

double feature_distance(const FeatureVector& a, const FeatureVector& b) {
  check_layouts(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double adversarial_loss(const FeatureVector& f_adv, const FeatureVector& f_clean) {
  return -feature_distance(f_adv, f_clean);
}

ad::Var adversarial_loss(ad::Tape& tape, ad::Var f_adv, const FeatureVector& f_clean) {
  if (f_adv.shape.size() != f_clean.values.size()) throw ContractError("feature vectors have different layouts");
  ad::Var clean = tape.constant(ad::Tensor{f_adv.shape, f_clean.values});
  return tape.scale(tape.l2_norm(tape.sub(f_adv, clean)), -1.0);
}

void write_csv(std::ostream& out, const FeatureVector& f) {
  if (!f.layout) throw ContractError("feature vector without layout");
  const std::size_t np = f.layout->paths.size();
  const std::size_t positions = f.values.size() / np;
  out << "path,value\n";
  char buf[64];
  for (std::size_t p = 0; p < np; ++p) {
    const Path& path = f.layout->paths[p];
    for (std::size_t q = 0; q < positions; ++q) {
      std::snprintf(buf, sizeof buf, "%.17g", f.values[q * np + p]);
      out << path.order << ':' << path.j1 << ':' << path.l1 << ':' << path.j2 << ':' << path.l2 << ',' << buf << '\n';
    }
  }
}

}  // namespace fingersafe::scatnet
