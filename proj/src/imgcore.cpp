#include "fingersafe/imgcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fingersafe/errors.hpp"

namespace fingersafe::imgcore {

namespace {

void check_dims(int height, int width, int channels) {
  if (height < 0 || width < 0) throw ShapeError("image dimensions must be non-negative");
  if (channels != 1 && channels != 3) throw ShapeError("image channels must be 1 or 3");
}

int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

std::uint8_t to_byte(double v) {
  double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

cv::Mat to_mat8(const Image& x) {
  if (x.channels() == 1) {
    cv::Mat m(x.height(), x.width(), CV_8UC1);
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c) m.at<std::uint8_t>(r, c) = to_byte(x.at(r, c));
    return m;
  }
  cv::Mat m(x.height(), x.width(), CV_8UC3);
  for (int r = 0; r < x.height(); ++r)
    for (int c = 0; c < x.width(); ++c) {
      auto& px = m.at<cv::Vec3b>(r, c);
      px[0] = to_byte(x.at(r, c, 2));
      px[1] = to_byte(x.at(r, c, 1));
      px[2] = to_byte(x.at(r, c, 0));
    }
  return m;
}

Image from_mat8(const cv::Mat& m) {
  if (m.depth() != CV_8U) throw IoError("only 8-bit images are supported");
  if (m.channels() == 1) {
    Image x(m.rows, m.cols, 1);
    for (int r = 0; r < m.rows; ++r)
      for (int c = 0; c < m.cols; ++c) x.at(r, c) = m.at<std::uint8_t>(r, c) / 255.0;
    return x;
  }
  cv::Mat bgr = m;
  if (m.channels() == 4) {
    bgr.create(m.rows, m.cols, CV_8UC3);
    int from_to[] = {0, 0, 1, 1, 2, 2};
    cv::mixChannels(&m, 1, &bgr, 1, from_to, 3);
  } else if (m.channels() != 3) {
    throw IoError("unsupported channel count");
  }
  Image x(bgr.rows, bgr.cols, 3);
  for (int r = 0; r < bgr.rows; ++r)
    for (int c = 0; c < bgr.cols; ++c) {
      const auto& px = bgr.at<cv::Vec3b>(r, c);
      x.at(r, c, 0) = px[2] / 255.0;
      x.at(r, c, 1) = px[1] / 255.0;
      x.at(r, c, 2) = px[0] / 255.0;
    }
  return x;
}

std::vector<double> gaussian_taps(int size, double sigma) {
  const int r = size / 2;
  std::vector<double> g(size);
  double total = 0.0;
  for (int d = -r; d <= r; ++d) {
    g[d + r] = std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));
    total += g[d + r];
  }
  for (auto& v : g) v /= total;
  return g;
}

void check_kernel_args(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ConfigError("kernel size must be a positive odd integer");
  if (!(sigma > 0.0)) throw ConfigError("kernel sigma must be positive");
}

}  // namespace

Image::Image(int height, int width, int channels, double fill) {
  check_dims(height, width, channels);
  height_ = height;
  width_ = width;
  channels_ = channels;
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data) {
  check_dims(height, width, channels);
  if (data.size() != static_cast<std::size_t>(height) * width * channels)
    throw ShapeError("image data length does not match H*W*C");
  height_ = height;
  width_ = width;
  channels_ = channels;
  data_ = std::move(data);
}

bool Image::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Image Image::channel(int ch) const {
  if (ch < 0 || ch >= channels_) throw ShapeError("channel index out of range");
  Image out(height_, width_, 1);
  for (std::size_t p = 0; p < pixel_count(); ++p) out.data_[p] = data_[p * channels_ + ch];
  return out;
}

void Image::set_channel(int ch, const Image& plane) {
  if (ch < 0 || ch >= channels_) throw ShapeError("channel index out of range");
  if (plane.height_ != height_ || plane.width_ != width_ || plane.channels_ != 1)
    throw ShapeError("plane shape mismatch");
  for (std::size_t p = 0; p < pixel_count(); ++p) data_[p * channels_ + ch] = plane.data_[p];
}

// ---------------------------------------------------------------- kernels

Kernel::Kernel(int size, std::vector<double> taps) {
  if (size < 1 || size % 2 == 0) throw ConfigError("kernel size must be a positive odd integer");
  if (taps.size() != static_cast<std::size_t>(size) * size) throw ShapeError("kernel taps must be size*size");
  for (double t : taps)
    if (!std::isfinite(t)) throw ConfigError("kernel taps must be finite");
  size_ = size;
  taps_ = std::move(taps);
}

Kernel Kernel::separable(std::vector<double> column, std::vector<double> row) {
  if (column.size() != row.size()) throw ShapeError("separable factors must have equal length");
  const int size = static_cast<int>(column.size());
  std::vector<double> taps(static_cast<std::size_t>(size) * size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) taps[static_cast<std::size_t>(i) * size + j] = column[i] * row[j];
  Kernel k(size, std::move(taps));
  k.column_ = std::move(column);
  k.row_ = std::move(row);
  return k;
}

double Kernel::sum() const {
  double s = 0.0;
  for (double t : taps_) s += t;
  return s;
}

Kernel Kernel::transposed() const {
  if (is_separable()) return separable(row_, column_);
  std::vector<double> t(taps_.size());
  for (int i = 0; i < size_; ++i)
    for (int j = 0; j < size_; ++j)
      t[static_cast<std::size_t>(j) * size_ + i] = taps_[static_cast<std::size_t>(i) * size_ + j];
  return Kernel(size_, std::move(t));
}

double default_sigma(int size) { return (size - 1) / 6.0; }

Kernel gaussian_kernel(int size, double sigma) {
  check_kernel_args(size, sigma);
  auto g = gaussian_taps(size, sigma);
  return Kernel::separable(g, g);
}

Kernel gaussian_kernel(int size) {
  if (size == 1) return Kernel(1, {1.0});
  return gaussian_kernel(size, default_sigma(size));
}

std::pair<Kernel, Kernel> gaussian_derivative_kernels(int size, double sigma) {
  check_kernel_args(size, sigma);
  const int r = size / 2;
  auto g = gaussian_taps(size, sigma);
  std::vector<double> dg(size);
  for (int d = -r; d <= r; ++d) dg[d + r] = -d / (sigma * sigma) * g[d + r];
  Kernel gx = Kernel::separable(g, dg);
  Kernel gy = Kernel::separable(dg, g);
  return {std::move(gx), std::move(gy)};
}

Kernel box_kernel(int size) {
  if (size < 1 || size % 2 == 0) throw ConfigError("kernel size must be a positive odd integer");
  std::vector<double> f(size, 1.0 / size);
  return Kernel::separable(f, f);
}

// ---------------------------------------------------------------- convolution

namespace {

void row_pass(std::span<const double> in, std::span<double> out, int h, int w, std::span<const double> f,
              Padding padding) {
  const int r = static_cast<int>(f.size()) / 2;
  std::vector<double> buf(static_cast<std::size_t>(w) + 2 * r);
  for (int i = 0; i < h; ++i) {
    const double* src = in.data() + static_cast<std::size_t>(i) * w;
    for (int t = 0; t < w + 2 * r; ++t) {
      int idx = t - r;
      if (padding == Padding::Replicate) buf[t] = src[clamp_index(idx, w)];
      else buf[t] = (idx >= 0 && idx < w) ? src[idx] : 0.0;
    }
    double* dst = out.data() + static_cast<std::size_t>(i) * w;
    for (int j = 0; j < w; ++j) {
      // buf[j - b + r] for b in [-r, r], mirrored taps summed as pairs so
      // antisymmetric filters cancel exactly on flat input
      double acc = f[r] * buf[j + r];
      for (int b = 1; b <= r; ++b) acc += f[r + b] * buf[j - b + r] + f[r - b] * buf[j + b + r];
      dst[j] = acc;
    }
  }
}

void row_pass_adjoint(std::span<const double> g, std::span<double> gin, int h, int w, std::span<const double> f,
                      Padding padding) {
  const int r = static_cast<int>(f.size()) / 2;
  std::vector<double> buf(static_cast<std::size_t>(w) + 2 * r);
  for (int i = 0; i < h; ++i) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const double* src = g.data() + static_cast<std::size_t>(i) * w;
    for (int j = 0; j < w; ++j) {
      const double gj = src[j];
      if (gj == 0.0) continue;
      for (int b = -r; b <= r; ++b) buf[j - b + r] += f[b + r] * gj;
    }
    double* dst = gin.data() + static_cast<std::size_t>(i) * w;
    for (int t = 0; t < w + 2 * r; ++t) {
      int idx = t - r;
      if (padding == Padding::Replicate) dst[clamp_index(idx, w)] += buf[t];
      else if (idx >= 0 && idx < w) dst[idx] += buf[t];
    }
  }
}

void column_pass(std::span<const double> in, std::span<double> out, int h, int w, std::span<const double> f,
                 Padding padding) {
  const int r = static_cast<int>(f.size()) / 2;
  std::vector<double> zeros(static_cast<std::size_t>(w), 0.0);
  auto row_at = [&](int src_row) -> const double* {
    if (padding == Padding::Replicate) src_row = clamp_index(src_row, h);
    else if (src_row < 0 || src_row >= h) return zeros.data();
    return in.data() + static_cast<std::size_t>(src_row) * w;
  };
  for (int i = 0; i < h; ++i) {
    double* dst = out.data() + static_cast<std::size_t>(i) * w;
    const double* mid = row_at(i);
    for (int j = 0; j < w; ++j) dst[j] = f[r] * mid[j];
    for (int a = 1; a <= r; ++a) {
      const double* up = row_at(i - a);
      const double* down = row_at(i + a);
      const double fu = f[r + a], fd = f[r - a];
      for (int j = 0; j < w; ++j) dst[j] += fu * up[j] + fd * down[j];
    }
  }
}

void column_pass_adjoint(std::span<const double> g, std::span<double> gin, int h, int w,
                         std::span<const double> f, Padding padding) {
  const int r = static_cast<int>(f.size()) / 2;
  for (int i = 0; i < h; ++i) {
    const double* src = g.data() + static_cast<std::size_t>(i) * w;
    for (int a = -r; a <= r; ++a) {
      int dst_row = i - a;
      if (padding == Padding::Replicate) dst_row = clamp_index(dst_row, h);
      else if (dst_row < 0 || dst_row >= h) continue;
      const double fa = f[a + r];
      double* dst = gin.data() + static_cast<std::size_t>(dst_row) * w;
      for (int j = 0; j < w; ++j) dst[j] += fa * src[j];
    }
  }
}

}  // namespace

void convolve_plane(std::span<const double> in, std::span<double> out, int h, int w, const Kernel& k,
                    Padding padding) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (in.size() != n || out.size() != n) throw ShapeError("convolve_plane: buffer size mismatch");
  if (n == 0) return;
  if (k.is_separable()) {
    std::vector<double> tmp(n);
    row_pass(in, tmp, h, w, k.row(), padding);
    column_pass(tmp, out, h, w, k.column(), padding);
    return;
  }
  const int r = k.radius();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int a = -r; a <= r; ++a) {
        int si = i - a;
        if (padding == Padding::Replicate) si = clamp_index(si, h);
        else if (si < 0 || si >= h) continue;
        for (int b = -r; b <= r; ++b) {
          int sj = j - b;
          if (padding == Padding::Replicate) sj = clamp_index(sj, w);
          else if (sj < 0 || sj >= w) continue;
          acc += k(a, b) * in[static_cast<std::size_t>(si) * w + sj];
        }
      }
      out[static_cast<std::size_t>(i) * w + j] = acc;
    }
}

void convolve_plane_adjoint(std::span<const double> grad_out, std::span<double> grad_in, int h, int w,
                            const Kernel& k, Padding padding) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (grad_out.size() != n || grad_in.size() != n) throw ShapeError("convolve_plane_adjoint: buffer size mismatch");
  if (n == 0) return;
  if (k.is_separable()) {
    std::vector<double> tmp(n, 0.0);
    column_pass_adjoint(grad_out, tmp, h, w, k.column(), padding);
    row_pass_adjoint(tmp, grad_in, h, w, k.row(), padding);
    return;
  }
  const int r = k.radius();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double g = grad_out[static_cast<std::size_t>(i) * w + j];
      if (g == 0.0) continue;
      for (int a = -r; a <= r; ++a) {
        int si = i - a;
        if (padding == Padding::Replicate) si = clamp_index(si, h);
        else if (si < 0 || si >= h) continue;
        for (int b = -r; b <= r; ++b) {
          int sj = j - b;
          if (padding == Padding::Replicate) sj = clamp_index(sj, w);
          else if (sj < 0 || sj >= w) continue;
          grad_in[static_cast<std::size_t>(si) * w + sj] += k(a, b) * g;
        }
      }
    }
}

Image conv2d(const Image& x, const Kernel& k, Padding padding) {
  Image out(x.height(), x.width(), x.channels());
  if (x.channels() == 1) {
    convolve_plane(x.data(), out.data(), x.height(), x.width(), k, padding);
    return out;
  }
  for (int ch = 0; ch < x.channels(); ++ch) {
    Image plane = x.channel(ch);
    Image res(x.height(), x.width(), 1);
    convolve_plane(plane.data(), res.data(), x.height(), x.width(), k, padding);
    out.set_channel(ch, res);
  }
  return out;
}

// ---------------------------------------------------------------- DFT

void dft_inplace(std::span<std::complex<double>> data, int height, int width, bool inverse) {
  if (data.size() != static_cast<std::size_t>(height) * width) throw ShapeError("dft: buffer size mismatch");
  if (data.empty()) return;
  cv::Mat src(height, width, CV_64FC2, reinterpret_cast<double*>(data.data()));
  cv::Mat dst;
  int flags = inverse ? (cv::DFT_INVERSE | cv::DFT_SCALE) : 0;
  cv::dft(src, dst, flags);
  std::copy_n(reinterpret_cast<const std::complex<double>*>(dst.ptr<double>()), data.size(), data.begin());
}

int fast_dft_size(int n) { return cv::getOptimalDFTSize(n); }

ComplexImage fft2(const Image& x) {
  if (x.channels() != 1) throw ShapeError("fft2 expects a single-channel image");
  ComplexImage out{x.height(), x.width(), {}};
  out.data.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data()[i];
  dft_inplace(out.data, out.height, out.width, false);
  return out;
}

ComplexImage fft2(const ComplexImage& x) {
  ComplexImage out = x;
  dft_inplace(out.data, out.height, out.width, false);
  return out;
}

ComplexImage ifft2(const ComplexImage& spectrum) {
  ComplexImage out = spectrum;
  dft_inplace(out.data, out.height, out.width, true);
  return out;
}

// ---------------------------------------------------------------- resampling and color

Image to_luminance(const Image& x) {
  if (x.channels() == 1) return x;
  Image out(x.height(), x.width(), 1);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < x.pixel_count(); ++p)
    dst[p] = kLumaR * src[3 * p] + kLumaG * src[3 * p + 1] + kLumaB * src[3 * p + 2];
  return out;
}

std::vector<AxisTap> bilinear_axis_plan(int in_size, int out_size) {
  if (in_size < 1 || out_size < 1) throw ConfigError("resize dimensions must be >= 1");
  std::vector<AxisTap> plan(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    int lo = static_cast<int>(std::floor(src));
    int hi = std::min(lo + 1, in_size - 1);
    plan[o] = {lo, hi, src - lo};
  }
  return plan;
}

Image resize_bilinear(const Image& x, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw ConfigError("resize target dimensions must be >= 1");
  if (out_height == x.height() && out_width == x.width()) return x;
  auto rows = bilinear_axis_plan(x.height(), out_height);
  auto cols = bilinear_axis_plan(x.width(), out_width);
  Image out(out_height, out_width, x.channels());
  for (int i = 0; i < out_height; ++i) {
    const auto& rt = rows[i];
    for (int j = 0; j < out_width; ++j) {
      const auto& ct = cols[j];
      for (int ch = 0; ch < x.channels(); ++ch) {
        double top = (1 - ct.weight_hi) * x.at(rt.lo, ct.lo, ch) + ct.weight_hi * x.at(rt.lo, ct.hi, ch);
        double bot = (1 - ct.weight_hi) * x.at(rt.hi, ct.lo, ch) + ct.weight_hi * x.at(rt.hi, ct.hi, ch);
        out.at(i, j, ch) = (1 - rt.weight_hi) * top + rt.weight_hi * bot;
      }
    }
  }
  return out;
}

Image crop(const Image& x, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height < 0 || width < 0 || top + height > x.height() || left + width > x.width())
    throw ShapeError("crop window outside image");
  Image out(height, width, x.channels());
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j)
      for (int ch = 0; ch < x.channels(); ++ch) out.at(i, j, ch) = x.at(top + i, left + j, ch);
  return out;
}

CropBox center_square(int height, int width) {
  const int side = std::min(height, width);
  return {(height - side) / 2, (width - side) / 2, side, side};
}

Image warp_rigid(const Image& x, double angle, double dx, double dy, double fill) {
  Image out(x.height(), x.width(), x.channels(), fill);
  const double cx = (x.width() - 1) / 2.0;
  const double cy = (x.height() - 1) / 2.0;
  const double c = std::cos(angle), s = std::sin(angle);
  for (int i = 0; i < x.height(); ++i)
    for (int j = 0; j < x.width(); ++j) {
      // inverse map: source = R(-angle) (p - centre - d) + centre
      const double px = j - cx - dx, py = i - cy - dy;
      const double sx = c * px + s * py + cx;
      const double sy = -s * px + c * py + cy;
      if (sx < 0 || sy < 0 || sx > x.width() - 1 || sy > x.height() - 1) continue;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, x.width() - 1), y1 = std::min(y0 + 1, x.height() - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int ch = 0; ch < x.channels(); ++ch) {
        double top = (1 - fx) * x.at(y0, x0, ch) + fx * x.at(y0, x1, ch);
        double bot = (1 - fx) * x.at(y1, x0, ch) + fx * x.at(y1, x1, ch);
        out.at(i, j, ch) = (1 - fy) * top + fy * bot;
      }
    }
  return out;
}

Image clamp01(Image x) {
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double psnr(const Image& reference, const Image& test) {
  if (!reference.same_shape(test)) throw ShapeError("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    double d = reference.data()[i] - test.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// ---------------------------------------------------------------- codecs

Image read_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image: " + path.string());
  return from_mat8(m);
}

Image read_png(const std::filesystem::path& path) { return read_image(path); }

void write_png(const Image& x, const std::filesystem::path& path) {
  std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), to_mat8(x), params)) throw IoError("cannot write image: " + path.string());
}

std::vector<std::uint8_t> encode_jpeg(const Image& x, int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("JPEG quality must be in [1,100]");
  std::vector<std::uint8_t> buf;
  std::vector<int> params{cv::IMWRITE_JPEG_QUALITY, quality};
  if (!cv::imencode(".jpg", to_mat8(x), buf, params)) throw IoError("JPEG encoding failed");
  return buf;
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("JPEG decoding failed");
  return from_mat8(m);
}

Image noise_to_display(const Image& noise) {
  Image out = noise;
  for (double& v : out.data()) v = std::clamp(0.5 + v * 8.0, 0.0, 1.0);
  return out;
}

}  // namespace fingersafe::imgcore
