#include "fingersafe/classical.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <ostream>

#include "fingersafe/errors.hpp"

namespace fingersafe::classical {

using imgcore::CropBox;
using imgcore::Image;
using imgcore::Kernel;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Clockwise from north.
constexpr std::array<int, 8> kDRow{-1, -1, 0, 1, 1, 1, 0, -1};
constexpr std::array<int, 8> kDCol{0, 1, 1, 1, 0, -1, -1, -1};

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a >= kTwoPi ? 0.0 : a;
}

double angle_gap(double a, double b) {
  const double d = std::fmod(std::abs(a - b), kTwoPi);
  return std::min(d, kTwoPi - d);
}

bool fg(const Image& s, int r, int c) {
  return r >= 0 && c >= 0 && r < s.height() && c < s.width() && s.at(r, c) > 0.5;
}

}  // namespace

// ---------------------------------------------------------------- masks

std::size_t SegmentationMask::area() const {
  return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

SegmentationMask SegmentationMask::full(int height, int width) {
  return SegmentationMask{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 1),
                          CropBox{0, 0, height, width}};
}

namespace {

CropBox bounding_box(const std::vector<std::uint8_t>& px, int h, int w) {
  int top = h, left = w, bottom = -1, right = -1;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (px[static_cast<std::size_t>(i) * w + j]) {
        top = std::min(top, i);
        bottom = std::max(bottom, i);
        left = std::min(left, j);
        right = std::max(right, j);
      }
  if (bottom < 0) return CropBox{0, 0, 0, 0};
  return CropBox{top, left, bottom - top + 1, right - left + 1};
}

}  // namespace

SegmentationMask restrict_to_box(const SegmentationMask& mask, const CropBox& box) {
  SegmentationMask out = mask;
  for (int i = 0; i < mask.height; ++i)
    for (int j = 0; j < mask.width; ++j)
      if (i < box.top || i >= box.top + box.height || j < box.left || j >= box.left + box.width)
        out.pixels[static_cast<std::size_t>(i) * mask.width + j] = 0;
  out.box = bounding_box(out.pixels, out.height, out.width);
  return out;
}

SegmentationMask crop_mask(const SegmentationMask& mask, const CropBox& box) {
  if (box.top < 0 || box.left < 0 || box.top + box.height > mask.height || box.left + box.width > mask.width)
    throw ShapeError("crop box outside mask");
  SegmentationMask out{box.height, box.width, std::vector<std::uint8_t>(static_cast<std::size_t>(box.height) * box.width), {}};
  for (int i = 0; i < box.height; ++i)
    for (int j = 0; j < box.width; ++j)
      out.pixels[static_cast<std::size_t>(i) * box.width + j] = mask.at(box.top + i, box.left + j) ? 1 : 0;
  out.box = bounding_box(out.pixels, out.height, out.width);
  return out;
}

Image paste(const Image& base, const Image& patch, const CropBox& box) {
  if (patch.height() != box.height || patch.width() != box.width || patch.channels() != base.channels())
    throw ShapeError("patch does not fit its box");
  if (box.top < 0 || box.left < 0 || box.top + box.height > base.height() || box.left + box.width > base.width())
    throw ShapeError("paste box outside image");
  Image out = base;
  for (int i = 0; i < box.height; ++i)
    for (int j = 0; j < box.width; ++j)
      for (int c = 0; c < base.channels(); ++c) out.at(box.top + i, box.left + j, c) = patch.at(i, j, c);
  return out;
}

// ---------------------------------------------------------------- Frangi

Image frangi_enhance(const Image& x, const FrangiParams& params) {
  if (x.channels() != 1) throw ShapeError("frangi_enhance expects a single-channel image");
  if (params.scales.empty()) throw ConfigError("frangi_enhance needs at least one scale");
  for (double s : params.scales)
    if (!(s > 0.0)) throw ConfigError("frangi scales must be positive");
  if (!(params.beta > 0.0)) throw ConfigError("frangi beta must be positive");

  const std::size_t n = x.size();
  std::vector<double> best(n, 0.0);
  for (double sigma : params.scales) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    const int size = 2 * radius + 1;
    std::vector<double> g(size), d1(size), d2(size);
    double total = 0.0;
    for (int t = -radius; t <= radius; ++t) total += g[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
    double mean2 = 0.0;
    for (int t = -radius; t <= radius; ++t) {
      g[t + radius] /= total;
      d1[t + radius] = -t / (sigma * sigma) * g[t + radius];
      d2[t + radius] = (t * t / (sigma * sigma) - 1.0) / (sigma * sigma) * g[t + radius];
      mean2 += d2[t + radius];
    }
    mean2 /= size;
    for (double& v : d2) v -= mean2;

    const double norm = sigma * sigma;
    Image hxx = imgcore::conv2d(x, Kernel::separable(g, d2));
    Image hyy = imgcore::conv2d(x, Kernel::separable(d2, g));
    Image hxy = imgcore::conv2d(x, Kernel::separable(d1, d1));

    std::vector<double> l1(n), l2(n), strength(n);
    double smax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = norm * hxx.data()[i], d = norm * hyy.data()[i], b = norm * hxy.data()[i];
      const double mid = 0.5 * (a + d);
      const double rad = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
      double e1 = mid + rad, e2 = mid - rad;
      if (std::abs(e1) > std::abs(e2)) std::swap(e1, e2);
      l1[i] = e1;
      l2[i] = e2;
      strength[i] = std::sqrt(e1 * e1 + e2 * e2);
      smax = std::max(smax, strength[i]);
    }
    if (smax < 1e-9) continue;
    const double c = 0.5 * smax;
    for (std::size_t i = 0; i < n; ++i) {
      if (l2[i] <= 0.0) continue;
      const double rb = l1[i] / l2[i];
      const double v = std::exp(-rb * rb / (2.0 * params.beta * params.beta)) *
                       (1.0 - std::exp(-strength[i] * strength[i] / (2.0 * c * c)));
      best[i] = std::max(best[i], v);
    }
  }
  const auto [lo, hi] = std::minmax_element(best.begin(), best.end());
  const double span = *hi - *lo;
  Image out(x.height(), x.width(), 1);
  if (span <= 0.0) return out;
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = (best[i] - *lo) / span;
  return out;
}

// ---------------------------------------------------------------- binarization and thinning

Image adaptive_threshold(const Image& ridge, int window, double offset) {
  if (ridge.channels() != 1) throw ShapeError("adaptive_threshold expects a single-channel image");
  if (window < 1 || window % 2 == 0) throw ConfigError("threshold window must be odd and positive");
  Image local = imgcore::conv2d(ridge, imgcore::box_kernel(window));
  Image out(ridge.height(), ridge.width(), 1);
  for (std::size_t i = 0; i < ridge.size(); ++i)
    out.data()[i] = ridge.data()[i] > local.data()[i] + offset ? 1.0 : 0.0;
  return out;
}

std::uint8_t neighbour_pattern(const Image& s, int row, int col) {
  std::uint8_t p = 0;
  for (int k = 0; k < 8; ++k)
    if (fg(s, row + kDRow[k], col + kDCol[k])) p |= static_cast<std::uint8_t>(1u << k);
  return p;
}

int crossing_number(std::uint8_t pattern) {
  int sum = 0;
  for (int k = 0; k < 8; ++k) {
    const int a = (pattern >> k) & 1;
    const int b = (pattern >> ((k + 1) % 8)) & 1;
    sum += std::abs(b - a);
  }
  return sum / 2;
}

Image thin(const Image& binary) {
  if (binary.channels() != 1) throw ShapeError("thin expects a single-channel image");
  Image s(binary.height(), binary.width(), 1);
  for (std::size_t i = 0; i < binary.size(); ++i) s.data()[i] = binary.data()[i] > 0.5 ? 1.0 : 0.0;

  // Neighbours in Zhang-Suen naming: P2 = N, P3 = NE, ..., P9 = NW, i.e. bit k is P(k+2).
  auto bit = [](std::uint8_t p, int k) { return (p >> k) & 1; };
  std::vector<std::pair<int, int>> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (int r = 0; r < s.height(); ++r)
        for (int c = 0; c < s.width(); ++c) {
          if (s.at(r, c) < 0.5) continue;
          const std::uint8_t p = neighbour_pattern(s, r, c);
          const int count = std::popcount(static_cast<unsigned>(p));
          if (count < 2 || count > 6) continue;
          int transitions = 0;
          for (int k = 0; k < 8; ++k) transitions += !bit(p, k) && bit(p, (k + 1) % 8);
          if (transitions != 1) continue;
          const int n = bit(p, 0), e = bit(p, 2), so = bit(p, 4), w = bit(p, 6);
          if (pass == 0 ? (n * e * so != 0 || e * so * w != 0) : (n * e * w != 0 || n * so * w != 0)) continue;
          doomed.emplace_back(r, c);
        }
      for (auto [r, c] : doomed) s.at(r, c) = 0.0;
      changed = changed || !doomed.empty();
    }
  }
  return s;
}

Image binarize_and_thin(const Image& ridge) { return thin(adaptive_threshold(ridge)); }

// ---------------------------------------------------------------- minutiae

MinutiaeSet raw_minutiae(const Image& skeleton) {
  if (skeleton.channels() != 1) throw ShapeError("skeleton must be single-channel");
  MinutiaeSet out{{}, skeleton.height(), skeleton.width()};
  for (int r = 0; r < skeleton.height(); ++r)
    for (int c = 0; c < skeleton.width(); ++c) {
      if (!fg(skeleton, r, c)) continue;
      const int cn = crossing_number(neighbour_pattern(skeleton, r, c));
      if (cn == 1) out.minutiae.push_back({double(c), double(r), 0.0, MinutiaKind::Ending});
      else if (cn == 3) out.minutiae.push_back({double(c), double(r), 0.0, MinutiaKind::Bifurcation});
    }
  return out;
}

namespace {

// Walks along the skeleton from `start`, never revisiting pixels in `blocked`
// or its own path, for up to kTraceLength steps. Returns the last pixel.
std::pair<int, int> trace(const Image& s, std::pair<int, int> start, std::vector<std::pair<int, int>> blocked) {
  auto r = start.first, c = start.second;
  blocked.push_back(start);
  for (int step = 1; step < kTraceLength; ++step) {
    int next = -1;
    // 4-neighbours first keeps the walk on the ridge centreline.
    for (int k : {0, 2, 4, 6, 1, 3, 5, 7}) {
      const int nr = r + kDRow[k], nc = c + kDCol[k];
      if (!fg(s, nr, nc)) continue;
      if (std::find(blocked.begin(), blocked.end(), std::make_pair(nr, nc)) != blocked.end()) continue;
      next = k;
      break;
    }
    if (next < 0) break;
    r += kDRow[next];
    c += kDCol[next];
    blocked.emplace_back(r, c);
  }
  return {r, c};
}

double direction(double from_r, double from_c, double to_r, double to_c) {
  return wrap_angle(std::atan2(to_r - from_r, to_c - from_c));
}

// Starting pixel of each run of foreground neighbours around (r, c).
std::vector<std::pair<int, int>> branch_starts(const Image& s, int r, int c) {
  const std::uint8_t p = neighbour_pattern(s, r, c);
  std::vector<std::pair<int, int>> starts;
  for (int k = 0; k < 8; ++k) {
    const bool here = (p >> k) & 1;
    const bool prev = (p >> ((k + 7) % 8)) & 1;
    if (here && !prev) starts.emplace_back(r + kDRow[k], c + kDCol[k]);
  }
  return starts;
}

double minutia_angle(const Image& s, const Minutia& m) {
  const int r = static_cast<int>(m.y), c = static_cast<int>(m.x);
  auto starts = branch_starts(s, r, c);
  if (starts.empty()) return 0.0;
  std::vector<std::pair<int, int>> blocked{{r, c}};
  for (const auto& st : starts) blocked.push_back(st);
  if (m.kind == MinutiaKind::Ending) {
    auto end = trace(s, starts.front(), {{r, c}});
    return direction(end.first, end.second, r, c);
  }
  std::vector<double> dirs;
  for (const auto& st : starts) {
    auto end = trace(s, st, blocked);
    dirs.push_back(direction(r, c, end.first, end.second));
  }
  if (dirs.size() < 2) return dirs.front();
  std::size_t bi = 0, bj = 1;
  double gap = 10.0;
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j)
      if (angle_gap(dirs[i], dirs[j]) < gap) {
        gap = angle_gap(dirs[i], dirs[j]);
        bi = i;
        bj = j;
      }
  const double sx = std::cos(dirs[bi]) + std::cos(dirs[bj]);
  const double sy = std::sin(dirs[bi]) + std::sin(dirs[bj]);
  return wrap_angle(std::atan2(sy, sx));
}

}  // namespace

MinutiaeSet extract_minutiae(const Image& skeleton, const SegmentationMask& mask) {
  if (mask.height != skeleton.height() || mask.width != skeleton.width())
    throw ShapeError("mask and skeleton differ in size");
  MinutiaeSet raw = raw_minutiae(skeleton);

  // Pixels whose square neighbourhood of radius kBorderMargin lies inside the
  // mask and the frame.
  cv::Mat m(mask.height, mask.width, CV_8U);
  for (int i = 0; i < mask.height; ++i)
    for (int j = 0; j < mask.width; ++j) m.at<std::uint8_t>(i, j) = mask.at(i, j) ? 255 : 0;
  const int k = 2 * static_cast<int>(kBorderMargin) + 1;
  cv::Mat inner;
  cv::erode(m, inner, cv::getStructuringElement(cv::MORPH_RECT, {k, k}), {-1, -1}, 1, cv::BORDER_CONSTANT,
            cv::Scalar(0));

  std::vector<Minutia> kept;
  for (const Minutia& mn : raw.minutiae)
    if (inner.at<std::uint8_t>(static_cast<int>(mn.y), static_cast<int>(mn.x))) kept.push_back(mn);

  std::vector<bool> close(kept.size(), false);
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = i + 1; j < kept.size(); ++j)
      if (std::hypot(kept[i].x - kept[j].x, kept[i].y - kept[j].y) < kMinSeparation) close[i] = close[j] = true;

  MinutiaeSet out{{}, skeleton.height(), skeleton.width()};
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (close[i]) continue;
    Minutia mn = kept[i];
    mn.angle = minutia_angle(skeleton, mn);
    out.minutiae.push_back(mn);
  }
  return out;
}

MinutiaeSet extract_minutiae(const Image& skeleton) {
  return extract_minutiae(skeleton, SegmentationMask::full(skeleton.height(), skeleton.width()));
}

// ---------------------------------------------------------------- matching

namespace {

// Uniform grid over the target set for tolerance-radius lookups.
class Grid {
 public:
  Grid(const std::vector<Minutia>& pts, double cell) : cell_(cell) {
    double minx = 0, miny = 0, maxx = 1, maxy = 1;
    for (const auto& p : pts) {
      minx = std::min(minx, p.x);
      miny = std::min(miny, p.y);
      maxx = std::max(maxx, p.x);
      maxy = std::max(maxy, p.y);
    }
    ox_ = minx;
    oy_ = miny;
    nx_ = static_cast<int>((maxx - minx) / cell) + 1;
    ny_ = static_cast<int>((maxy - miny) / cell) + 1;
    cells_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (std::size_t i = 0; i < pts.size(); ++i) cells_[index(cx(pts[i].x), cy(pts[i].y))].push_back(static_cast<int>(i));
  }

  template <typename F>
  void visit(double x, double y, F&& f) const {
    const int gx = cx(x), gy = cy(y);
    for (int yy = std::max(gy - 1, 0); yy <= std::min(gy + 1, ny_ - 1); ++yy)
      for (int xx = std::max(gx - 1, 0); xx <= std::min(gx + 1, nx_ - 1); ++xx)
        for (int i : cells_[index(xx, yy)]) f(i);
  }

 private:
  int cx(double x) const { return static_cast<int>(std::floor((x - ox_) / cell_)); }
  int cy(double y) const { return static_cast<int>(std::floor((y - oy_) / cell_)); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * nx_ + x; }

  double cell_, ox_ = 0, oy_ = 0;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> cells_;
};

double directed_score(const MinutiaeSet& a, const MinutiaeSet& b, const MatchParams& params) {
  const auto& pa = a.minutiae;
  const auto& pb = b.minutiae;
  const Grid grid(pb, params.distance_tolerance);
  const double tol2 = params.distance_tolerance * params.distance_tolerance;
  std::vector<int> taken(pb.size(), -1);
  int stamp = 0;
  int best = 0;
  for (const Minutia& ra : pa)
    for (const Minutia& rb : pb) {
      if (ra.kind != rb.kind) continue;
      const double rot = rb.angle - ra.angle;
      const double cr = std::cos(rot), sr = std::sin(rot);
      ++stamp;
      int matched = 0;
      for (const Minutia& m : pa) {
        const double dx = m.x - ra.x, dy = m.y - ra.y;
        const double tx = rb.x + cr * dx - sr * dy;
        const double ty = rb.y + sr * dx + cr * dy;
        const double ta = m.angle + rot;
        int pick = -1;
        double pick_d2 = tol2;
        grid.visit(tx, ty, [&](int i) {
          if (taken[i] == stamp) return;
          const double ex = pb[i].x - tx, ey = pb[i].y - ty;
          const double d2 = ex * ex + ey * ey;
          if (d2 > pick_d2 || (d2 == pick_d2 && pick >= 0 && i > pick)) return;
          if (angle_gap(ta, pb[i].angle) > params.angle_tolerance) return;
          pick = i;
          pick_d2 = d2;
        });
        if (pick >= 0) {
          taken[pick] = stamp;
          ++matched;
        }
      }
      best = std::max(best, matched);
    }
  return 2.0 * best / static_cast<double>(pa.size() + pb.size());
}

}  // namespace

double match_minutiae(const MinutiaeSet& a, const MinutiaeSet& b, const MatchParams& params) {
  if (a.empty() || b.empty()) return 0.0;
  return std::max(directed_score(a, b, params), directed_score(b, a, params));
}

// ---------------------------------------------------------------- segmentation

FingertipCrop segment_fingertip(const Image& photo, const SkinRule& rule, double tip_fraction) {
  if (photo.channels() != 3) throw ShapeError("segment_fingertip expects an RGB photo");
  if (!(tip_fraction > 0.0 && tip_fraction <= 1.0)) throw ConfigError("tip fraction must lie in (0, 1]");
  const int h = photo.height(), w = photo.width();
  cv::Mat skin(h, w, CV_8U, cv::Scalar(0));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double r = photo.at(i, j, 0), g = photo.at(i, j, 1), b = photo.at(i, j, 2);
      const double sum = r + g + b;
      if (sum <= 1e-6) continue;
      const double nr = r / sum, ng = g / sum;
      if (nr >= rule.r_lo && nr <= rule.r_hi && ng >= rule.g_lo && ng <= rule.g_hi) skin.at<std::uint8_t>(i, j) = 255;
    }
  cv::Mat opened;
  cv::morphologyEx(skin, opened, cv::MORPH_OPEN, cv::getStructuringElement(cv::MORPH_RECT, {3, 3}), {-1, -1}, 2);
  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(opened, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
  int best = -1;
  double best_area = 0.0;
  for (std::size_t k = 0; k < contours.size(); ++k) {
    const double area = cv::contourArea(contours[k]);
    if (area > best_area) {
      best_area = area;
      best = static_cast<int>(k);
    }
  }
  if (best < 0 || best_area < 0.01 * h * w) throw SegmentationError("no skin-coloured region above 1% of the frame");
  cv::Mat filled(h, w, CV_8U, cv::Scalar(0));
  cv::drawContours(filled, contours, best, cv::Scalar(255), cv::FILLED);

  FingertipCrop out;
  out.mask = SegmentationMask{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0), {}};
  double mr = 0, mc = 0, count = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (filled.at<std::uint8_t>(i, j)) {
        out.mask.pixels[static_cast<std::size_t>(i) * w + j] = 1;
        mr += i;
        mc += j;
        count += 1;
      }
  out.mask.box = bounding_box(out.mask.pixels, h, w);
  mr /= count;
  mc /= count;

  // Major axis from second moments; orient it so it points from tip to base.
  double srr = 0, scc = 0, src = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (out.mask.at(i, j)) {
        srr += (i - mr) * (i - mr);
        scc += (j - mc) * (j - mc);
        src += (i - mr) * (j - mc);
      }
  const double theta = 0.5 * std::atan2(2.0 * src, scc - srr);
  double ar = std::sin(theta), ac = std::cos(theta);
  double lo = 1e300, hi = -1e300, lo_row = 0, hi_row = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (out.mask.at(i, j)) {
        const double t = (i - mr) * ar + (j - mc) * ac;
        if (t < lo) {
          lo = t;
          lo_row = i;
        }
        if (t > hi) {
          hi = t;
          hi_row = i;
        }
      }
  if (hi_row < lo_row) {
    ar = -ar;
    ac = -ac;
    std::swap(lo, hi);
    lo = -lo;
    hi = -hi;
  }
  const double cut = lo + tip_fraction * (hi - lo);
  std::vector<std::uint8_t> tip(out.mask.pixels.size(), 0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (out.mask.at(i, j) && (i - mr) * ar + (j - mc) * ac <= cut + 1e-9) tip[static_cast<std::size_t>(i) * w + j] = 1;
  out.crop_box = bounding_box(tip, h, w);
  out.cropped = imgcore::crop(photo, out.crop_box.top, out.crop_box.left, out.crop_box.height, out.crop_box.width);
  return out;
}

// ---------------------------------------------------------------- pipeline and io

MinutiaeSet minutiae_from_image(const Image& x) {
  Image gray = imgcore::to_luminance(x);
  Image skeleton = binarize_and_thin(frangi_enhance(gray));
  SegmentationMask mask = SegmentationMask::full(x.height(), x.width());
  if (x.channels() == 3) {
    try {
      mask = segment_fingertip(x).mask;
    } catch (const SegmentationError&) {
    }
  }
  return extract_minutiae(skeleton, mask);
}

void write_csv(std::ostream& out, const MinutiaeSet& set) {
  out << "x,y,angle_deg,kind\n";
  char buf[96];
  for (const Minutia& m : set.minutiae) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f,%.4f,%s\n", m.x, m.y, m.angle * 180.0 / std::numbers::pi,
                  m.kind == MinutiaKind::Ending ? "ending" : "bifurcation");
    out << buf;
  }
}

void write_mask_png(const SegmentationMask& mask, const std::filesystem::path& path) {
  cv::Mat m(mask.height, mask.width, CV_8U);
  for (int i = 0; i < mask.height; ++i)
    for (int j = 0; j < mask.width; ++j) m.at<std::uint8_t>(i, j) = mask.at(i, j) ? 255 : 0;
  if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PNG_BILEVEL, 1})) throw IoError("cannot write " + path.string());
}

}  // namespace fingersafe::classical
