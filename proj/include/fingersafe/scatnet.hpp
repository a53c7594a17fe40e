#pragma once

#include <iosfwd>
#include <memory>
#include <vector>

#include "fingersafe/graddiff.hpp"
#include "fingersafe/imgcore.hpp"

namespace fingersafe::scatnet {

struct ScatteringConfig {
  int J = 2;
  int L = 8;
  int input_size = 50;

  friend bool operator==(const ScatteringConfig&, const ScatteringConfig&) = default;
};

// One scattering path. Unused scale/angle slots are -1.
struct Path {
  int order = 0;
  int j1 = -1, l1 = -1;
  int j2 = -1, l2 = -1;
};

struct Layout {
  std::vector<Path> paths;
  int height = 0;  // spatial grid of each path after low-pass averaging
  int width = 0;

  std::size_t size() const { return paths.size() * static_cast<std::size_t>(height) * width; }
};

/// Flattened coefficients, position-major: values[(i*width + j)*paths + p].
struct FeatureVector {
  std::vector<double> values;
  std::shared_ptr<const Layout> layout;
};

class ScatteringNetwork {
 public:
  explicit ScatteringNetwork(ScatteringConfig cfg = {});

  const ScatteringConfig& config() const { return cfg_; }
  const Layout& layout() const { return *layout_; }
  std::shared_ptr<const Layout> shared_layout() const { return layout_; }

  /// Coefficients of a single-channel input_size x input_size image.
  FeatureVector scatter(const imgcore::Image& x) const;
  ad::Var scatter(ad::Tape& tape, ad::Var x) const;

  /// Luminance, centre square crop and resize to input_size, then scatter.
  FeatureVector features(const imgcore::Image& x) const;
  ad::Var features(ad::Tape& tape, ad::Var x) const;

  // Fourier-domain filters on the padded grid (row-major, unshifted).
  const ad::ComplexSpectrum& wavelet(int j, int l) const { return *wavelets_[j * cfg_.L + l]; }
  const ad::ComplexSpectrum& lowpass() const { return *lowpass_; }
  int padded_size() const { return padded_; }

 private:
  ad::Var average(ad::Tape& tape, ad::Var spectrum) const;

  ScatteringConfig cfg_;
  int pad_ = 0;
  int padded_ = 0;
  int border_ = 0;
  std::vector<std::shared_ptr<const ad::ComplexSpectrum>> wavelets_;
  std::shared_ptr<const ad::ComplexSpectrum> lowpass_;
  std::shared_ptr<const Layout> layout_;
};

// Shared instance with the default configuration.
const ScatteringNetwork& default_network();

imgcore::Image prepare_input(const imgcore::Image& x, int size);
ad::Var prepare_input(ad::Tape& tape, ad::Var x, int size);

/// -||f_adv - f_clean||_2
double adversarial_loss(const FeatureVector& f_adv, const FeatureVector& f_clean);
ad::Var adversarial_loss(ad::Tape& tape, ad::Var f_adv, const FeatureVector& f_clean);

double feature_distance(const FeatureVector& a, const FeatureVector& b);

// One CSV row "path,value" per coefficient, path-major, path written as order:j1:l1:j2:l2.
void write_csv(std::ostream& out, const FeatureVector& f);

}  // namespace fingersafe::scatnet
