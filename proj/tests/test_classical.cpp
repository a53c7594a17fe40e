#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "fingersafe/classical.hpp"
#include "fingersafe/errors.hpp"
#include "support.hpp"

using namespace fingersafe;
using classical::MinutiaeSet;
using classical::MinutiaKind;
using imgcore::Image;

namespace {

constexpr double kPi = std::numbers::pi;

std::size_t count_kind(const MinutiaeSet& s, MinutiaKind kind) {
  return static_cast<std::size_t>(
      std::count_if(s.minutiae.begin(), s.minutiae.end(), [&](const auto& m) { return m.kind == kind; }));
}

// Y skeleton drawn into a canvas at (top, left): two diagonal arms meeting at
// (4,4) and a stem down to (8,4).
Image y_shape(int canvas, int top, int left) {
  Image s(canvas, canvas, 1);
  for (int k = 0; k <= 4; ++k) {
    s.at(top + k, left + k) = 1.0;
    s.at(top + k, left + 8 - k) = 1.0;
    s.at(top + 4 + k, left + 4) = 1.0;
  }
  return s;
}

MinutiaeSet random_set(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(20.0, 220.0), ang(0.0, 2.0 * kPi);
  MinutiaeSet s{{}, 240, 240};
  while (static_cast<int>(s.size()) < count) {
    classical::Minutia m{pos(rng), pos(rng), ang(rng), rng() % 2 ? MinutiaKind::Ending : MinutiaKind::Bifurcation};
    bool spaced = true;
    for (const auto& o : s.minutiae) spaced = spaced && std::hypot(o.x - m.x, o.y - m.y) >= 25.0;
    if (spaced) s.minutiae.push_back(m);
  }
  return s;
}

MinutiaeSet moved(const MinutiaeSet& s, double angle, double dx, double dy) {
  MinutiaeSet out = s;
  const double c = std::cos(angle), sn = std::sin(angle);
  for (auto& m : out.minutiae) {
    const double x = m.x - 120.0, y = m.y - 120.0;
    m.x = 120.0 + c * x - sn * y + dx;
    m.y = 120.0 + sn * x + c * y + dy;
    m.angle = std::fmod(m.angle + angle + 2.0 * kPi, 2.0 * kPi);
  }
  return out;
}

Image photo_with_rect(int h, int w, imgcore::CropBox rect) {
  Image p(h, w, 3);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const bool in = i >= rect.top && i < rect.top + rect.height && j >= rect.left && j < rect.left + rect.width;
      p.at(i, j, 0) = in ? 0.80 : 0.10;
      p.at(i, j, 1) = in ? 0.60 : 0.60;
      p.at(i, j, 2) = in ? 0.45 : 0.10;
    }
  return p;
}

// 8-connected foreground components by flood fill.
int components(const classical::SegmentationMask& mask) {
  std::vector<int> seen(mask.pixels.size(), 0);
  int count = 0;
  for (int i = 0; i < mask.height; ++i)
    for (int j = 0; j < mask.width; ++j) {
      if (!mask.at(i, j) || seen[static_cast<std::size_t>(i) * mask.width + j]) continue;
      ++count;
      std::vector<std::pair<int, int>> stack{{i, j}};
      seen[static_cast<std::size_t>(i) * mask.width + j] = 1;
      while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = r + dr, nc = c + dc;
            if (nr < 0 || nc < 0 || nr >= mask.height || nc >= mask.width || !mask.at(nr, nc)) continue;
            int& s = seen[static_cast<std::size_t>(nr) * mask.width + nc];
            if (!s) {
              s = 1;
              stack.emplace_back(nr, nc);
            }
          }
      }
    }
  return count;
}

}  // namespace

TEST_CASE("crossing number equals the count of 0->1 transitions for all 256 patterns") {
  for (int p = 0; p < 256; ++p) {
    int rises = 0;
    for (int k = 0; k < 8; ++k) {
      const bool cur = (p >> k) & 1;
      const bool next = (p >> ((k + 1) % 8)) & 1;
      rises += !cur && next;
    }
    CAPTURE(p);
    CHECK(classical::crossing_number(static_cast<std::uint8_t>(p)) == rises);
  }
}

TEST_CASE("neighbour bits run clockwise from north") {
  Image s(3, 3, 1);
  s.at(0, 1) = 1.0;  // N
  s.at(1, 2) = 1.0;  // E
  s.at(2, 0) = 1.0;  // SW
  CHECK(classical::neighbour_pattern(s, 1, 1) == ((1 << 0) | (1 << 2) | (1 << 5)));
  CHECK(classical::neighbour_pattern(s, 0, 0) == (1 << 2));
}

TEST_CASE("straight line: two endings pointing outward") {
  Image s(40, 40, 1);
  for (int c = 10; c <= 30; ++c) s.at(20, c) = 1.0;
  const MinutiaeSet raw = classical::raw_minutiae(s);
  CHECK(count_kind(raw, MinutiaKind::Ending) == 2);
  CHECK(count_kind(raw, MinutiaKind::Bifurcation) == 0);

  const MinutiaeSet m = classical::extract_minutiae(s);
  REQUIRE(m.size() == 2);
  for (const auto& mn : m.minutiae) {
    CHECK(mn.kind == MinutiaKind::Ending);
    const double expected = mn.x < 20 ? kPi : 0.0;
    CHECK(std::abs(std::remainder(mn.angle - expected, 2.0 * kPi)) <= 1e-9);
  }
  CHECK(classical::extract_minutiae(Image(40, 40, 1)).empty());
}

TEST_CASE("Y skeleton: three endings and one bifurcation") {
  const MinutiaeSet raw = classical::raw_minutiae(y_shape(9, 0, 0));
  CHECK(count_kind(raw, MinutiaKind::Ending) == 3);
  REQUIRE(count_kind(raw, MinutiaKind::Bifurcation) == 1);
  for (const auto& m : raw.minutiae)
    if (m.kind == MinutiaKind::Bifurcation) {
      CHECK(m.x == 4.0);
      CHECK(m.y == 4.0);
    }

  const MinutiaeSet kept = classical::extract_minutiae(y_shape(41, 16, 16));
  CHECK(count_kind(kept, MinutiaKind::Ending) == 3);
  CHECK(count_kind(kept, MinutiaKind::Bifurcation) == 1);
  // the same drawing near the frame loses everything inside the border margin
  CHECK(classical::extract_minutiae(y_shape(41, 0, 0)).empty());
}

TEST_CASE("close pairs and masked-out minutiae are dropped") {
  Image s(60, 60, 1);
  for (int c = 20; c <= 22; ++c) s.at(30, c) = 1.0;  // endings 2 px apart
  CHECK(classical::raw_minutiae(s).size() == 2);
  CHECK(classical::extract_minutiae(s).empty());

  Image line(60, 60, 1);
  for (int c = 15; c <= 45; ++c) line.at(30, c) = 1.0;
  auto mask = classical::SegmentationMask::full(60, 60);
  for (int i = 0; i < 60; ++i)
    for (int j = 0; j < 30; ++j) mask.pixels[static_cast<std::size_t>(i) * 60 + j] = 0;
  const MinutiaeSet m = classical::extract_minutiae(line, mask);
  REQUIRE(m.size() == 1);
  CHECK(m.minutiae[0].x == 45.0);
  CHECK_THROWS_AS(classical::extract_minutiae(line, classical::SegmentationMask::full(10, 10)), ShapeError);
}

TEST_CASE("thinning a 5-px bar leaves a 1-px centre line") {
  Image bar(25, 40, 1);
  for (int r = 10; r <= 14; ++r)
    for (int c = 5; c <= 34; ++c) bar.at(r, c) = 1.0;
  const Image skel = classical::thin(bar);
  int columns = 0;
  for (int c = 0; c < 40; ++c) {
    int in_column = 0;
    for (int r = 0; r < 25; ++r)
      if (skel.at(r, c) > 0.5) {
        ++in_column;
        CHECK(r == 12);
      }
    CHECK(in_column <= 1);
    columns += in_column;
  }
  CHECK(columns >= 20);
  CHECK(classical::thin(skel) == skel);
}

TEST_CASE("thinning is idempotent and maps zero to zero") {
  const Image blobs = classical::adaptive_threshold(testing::random_image(40, 40, 1, 3));
  const Image once = classical::thin(blobs);
  CHECK(classical::thin(once) == once);
  for (double v : once.data()) CHECK((v == 0.0 || v == 1.0));
  const Image empty = classical::binarize_and_thin(Image(20, 20, 1));
  for (double v : empty.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(classical::adaptive_threshold(Image(5, 5, 1), 4), ConfigError);
}

TEST_CASE("Frangi: flat input, dark line, ridge pattern, errors") {
  const Image flat = classical::frangi_enhance(Image(30, 30, 1, 0.6));
  for (double v : flat.data()) CHECK(v == 0.0);

  Image line(41, 41, 1, 0.9);
  for (int r = 0; r < 41; ++r)
    for (int c = 19; c <= 21; ++c) line.at(r, c) = 0.2;
  const Image resp = classical::frangi_enhance(line, {{1.0, 2.0, 3.0}, 0.5});
  double on = 0.0;
  std::vector<double> off;
  for (int r = 0; r < 41; ++r)
    for (int c = 0; c < 41; ++c) {
      if (c == 20) on += resp.at(r, c) / 41.0;
      else if (std::abs(c - 20) >= 6) off.push_back(resp.at(r, c));
      CHECK(resp.at(r, c) >= 0.0);
      CHECK(resp.at(r, c) <= 1.0);
    }
  std::nth_element(off.begin(), off.begin() + off.size() / 2, off.end());
  CHECK(on > 0.0);
  CHECK(on >= 5.0 * off[off.size() / 2]);

  Image pattern(64, 64, 1);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) pattern.at(r, c) = 0.5 + 0.5 * std::sin(2.0 * kPi * (c + 0.3 * r) / 8.0);
  const Image pr = classical::frangi_enhance(pattern);
  double ridge = 0, valley = 0;
  int nr = 0, nv = 0;
  for (std::size_t p = 0; p < pattern.size(); ++p) {
    if (pattern.data()[p] < 0.2) ridge += pr.data()[p], ++nr;
    else if (pattern.data()[p] > 0.8) valley += pr.data()[p], ++nv;
  }
  CHECK(ridge / nr > valley / nv);
  CHECK(classical::frangi_enhance(pattern) == pr);

  CHECK_THROWS_AS(classical::frangi_enhance(pattern, {{}, 0.5}), ConfigError);
  CHECK_THROWS_AS(classical::frangi_enhance(Image(8, 8, 3)), ShapeError);
}

TEST_CASE("matching: self, symmetry, range, empty sets") {
  const MinutiaeSet a = random_set(1, 25);
  const MinutiaeSet b = random_set(2, 30);
  CHECK(classical::match_minutiae(a, a) == 1.0);
  const double ab = classical::match_minutiae(a, b);
  CHECK(ab == classical::match_minutiae(b, a));
  CHECK(ab >= 0.0);
  CHECK(ab < 0.5);
  CHECK(classical::match_minutiae(a, MinutiaeSet{}) == 0.0);
  CHECK(classical::match_minutiae(MinutiaeSet{}, MinutiaeSet{}) == 0.0);
  MinutiaeSet one{{a.minutiae[0]}, 240, 240};
  CHECK(classical::match_minutiae(one, one) == 1.0);
}

TEST_CASE("matching survives rigid motion") {
  const MinutiaeSet a = random_set(3, 30);
  CHECK(classical::match_minutiae(a, moved(a, 10.0 * kPi / 180.0, 5.0, 7.0)) >= 0.9);

  const MinutiaeSet b = random_set(4, 30);
  MinutiaeSet partial = moved(a, -0.2, 3.0, -4.0);
  partial.minutiae.resize(20);
  partial.minutiae.insert(partial.minutiae.end(), b.minutiae.begin(), b.minutiae.begin() + 10);
  const double base = classical::match_minutiae(a, partial);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ang(-kPi, kPi), shift(-30.0, 30.0);
  for (int k = 0; k < 10; ++k) {
    const double t = ang(rng), dx = shift(rng), dy = shift(rng);
    CHECK(std::abs(classical::match_minutiae(moved(a, t, dx, dy), moved(partial, t, dx, dy)) - base) <= 0.05);
  }
}

TEST_CASE("segmentation recovers a skin rectangle") {
  const imgcore::CropBox rect{30, 50, 100, 60};
  const Image photo = photo_with_rect(160, 160, rect);
  const auto tip = classical::segment_fingertip(photo);
  std::size_t inter = 0, uni = 0;
  for (int i = 0; i < 160; ++i)
    for (int j = 0; j < 160; ++j) {
      const bool in = i >= rect.top && i < rect.top + rect.height && j >= rect.left && j < rect.left + rect.width;
      inter += in && tip.mask.at(i, j);
      uni += in || tip.mask.at(i, j);
    }
  CHECK(static_cast<double>(inter) / uni >= 0.9);

  CHECK(components(tip.mask) == 1);

  CHECK(tip.crop_box.top >= tip.mask.box.top);
  CHECK(tip.crop_box.top + tip.crop_box.height <= tip.mask.box.top + tip.mask.box.height);
  CHECK(tip.crop_box.height == doctest::Approx(0.55 * rect.height).epsilon(0.05));
  CHECK(tip.cropped.height() == tip.crop_box.height);
  CHECK(tip.cropped.width() == tip.crop_box.width);
}

TEST_CASE("segmentation errors") {
  CHECK_THROWS_AS(classical::segment_fingertip(photo_with_rect(100, 100, {0, 0, 0, 0})), SegmentationError);
  CHECK_THROWS_AS(classical::segment_fingertip(photo_with_rect(100, 100, {10, 10, 5, 5})), SegmentationError);
  CHECK_THROWS_AS(classical::segment_fingertip(Image(50, 50, 1)), ShapeError);
}

TEST_CASE("mask helpers and paste") {
  auto mask = classical::SegmentationMask::full(10, 12);
  CHECK(mask.area() == 120);
  const imgcore::CropBox box{2, 3, 4, 5};
  const auto inside = classical::restrict_to_box(mask, box);
  CHECK(inside.area() == 20);
  CHECK(inside.at(2, 3));
  CHECK(!inside.at(1, 3));
  const auto cropped = classical::crop_mask(mask, box);
  CHECK(cropped.height == 4);
  CHECK(cropped.width == 5);
  CHECK(cropped.area() == 20);

  const Image base(10, 12, 1, 0.0);
  const Image patch(4, 5, 1, 1.0);
  const Image out = classical::paste(base, patch, box);
  double total = 0.0;
  for (double v : out.data()) total += v;
  CHECK(total == 20.0);
  CHECK(out.at(5, 7) == 1.0);
  CHECK_THROWS_AS(classical::paste(base, patch, {8, 8, 4, 5}), ShapeError);
}

TEST_CASE("csv export") {
  MinutiaeSet s{{{1.5, 2.0, kPi / 2, MinutiaKind::Ending}, {3.0, 4.0, 0.0, MinutiaKind::Bifurcation}}, 10, 10};
  std::ostringstream out;
  classical::write_csv(out, s);
  CHECK(out.str() == "x,y,angle_deg,kind\n1.500,2.000,90.0000,ending\n3.000,4.000,0.0000,bifurcation\n");
}
