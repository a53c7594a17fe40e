#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fingersafe::imgcore {

/// Dense H x W x C image of doubles, row-major with interleaved channels.
/// Channels are 1 (gray) or 3 (RGB). Nominal range is [0,1]; only clamp01 and
/// the codecs enforce it.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);
  Image(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int row, int col, int ch = 0) {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  double at(int row, int col, int ch = 0) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>&& release() && { return std::move(data_); }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_finite() const;

  Image channel(int ch) const;
  void set_channel(int ch, const Image& plane);

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

struct ComplexImage {
  int height = 0;
  int width = 0;
  std::vector<std::complex<double>> data;

  std::complex<double>& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  std::complex<double> at(int row, int col) const {
    return data[static_cast<std::size_t>(row) * width + col];
  }
};

enum class Padding { Replicate, Zero };

/// Odd k x k filter. Kernels built from 1-D factors keep them so that
/// convolution can run as two 1-D passes.
class Kernel {
 public:
  Kernel(int size, std::vector<double> taps);
  static Kernel separable(std::vector<double> column, std::vector<double> row);

  int size() const { return size_; }
  int radius() const { return size_ / 2; }
  double operator()(int di, int dj) const {
    return taps_[static_cast<std::size_t>(di + radius()) * size_ + (dj + radius())];
  }
  std::span<const double> taps() const { return taps_; }
  double sum() const;

  bool is_separable() const { return !column_.empty(); }
  std::span<const double> column() const { return column_; }
  std::span<const double> row() const { return row_; }

  Kernel transposed() const;

 private:
  Kernel() = default;
  int size_ = 1;
  std::vector<double> taps_;
  std::vector<double> column_;
  std::vector<double> row_;
};

// Kernel constructors. sigma defaults follow the +-3 sigma support rule.
double default_sigma(int size);
Kernel gaussian_kernel(int size, double sigma);
Kernel gaussian_kernel(int size);
std::pair<Kernel, Kernel> gaussian_derivative_kernels(int size, double sigma);
Kernel box_kernel(int size);

/// True 2-D convolution: out(i,j) = sum k(a,b) x(i-a, j-b), out-of-range
/// samples resolved by the padding mode. Same H x W as the input.
Image conv2d(const Image& x, const Kernel& k, Padding padding = Padding::Replicate);

// Plane-level primitives shared with the differentiation tape.
void convolve_plane(std::span<const double> in, std::span<double> out, int height, int width,
                    const Kernel& k, Padding padding);
// Accumulates the vector-Jacobian product of convolve_plane into grad_in.
void convolve_plane_adjoint(std::span<const double> grad_out, std::span<double> grad_in, int height,
                            int width, const Kernel& k, Padding padding);

/// Unnormalized forward DFT; the inverse carries the 1/(H*W) factor.
ComplexImage fft2(const Image& x);
ComplexImage fft2(const ComplexImage& x);
ComplexImage ifft2(const ComplexImage& spectrum);
void dft_inplace(std::span<std::complex<double>> data, int height, int width, bool inverse);
// Smallest length >= n whose transform factors into small primes.
int fast_dft_size(int n);

/// Y = 0.299 R + 0.587 G + 0.114 B. Gray input passes through.
Image to_luminance(const Image& x);
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

// Sampling plan along one axis for half-pixel-centred bilinear resizing.
struct AxisTap {
  int lo = 0;
  int hi = 0;
  double weight_hi = 0.0;
};
std::vector<AxisTap> bilinear_axis_plan(int in_size, int out_size);
Image resize_bilinear(const Image& x, int out_height, int out_width);

Image crop(const Image& x, int top, int left, int height, int width);
struct CropBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};
CropBox center_square(int height, int width);

/// Rotates by `angle` radians about the image centre (x right, y down), then
/// translates by (dx, dy). Samples falling outside take `fill`.
Image warp_rigid(const Image& x, double angle, double dx, double dy, double fill = 0.0);

Image clamp01(Image x);
double max_abs_diff(const Image& a, const Image& b);
double psnr(const Image& reference, const Image& test);

// Codecs. 8-bit quantization happens only here.
Image read_png(const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);
void write_png(const Image& x, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_jpeg(const Image& x, int quality);
Image decode_jpeg(std::span<const std::uint8_t> bytes);

/// Signed noise to a viewable image: n -> clamp(0.5 + 8 n, 0, 1).
Image noise_to_display(const Image& noise);

}  // namespace fingersafe::imgcore
