#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

#include "fingersafe/imgcore.hpp"

namespace testing {

using fingersafe::imgcore::Image;
using fingersafe::imgcore::Kernel;

inline Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image x(h, w, c);
  for (double& v : x.data()) v = u(rng);
  return x;
}

// out(i,j) = sum_{a,b} k(a,b) x(i-a, j-b), out-of-range samples by clamping
// (replicate) or as zero.
inline Image brute_conv(const Image& x, const Kernel& k, bool replicate) {
  const int h = x.height(), w = x.width(), r = k.radius();
  Image out(h, w, 1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int a = -r; a <= r; ++a)
        for (int b = -r; b <= r; ++b) {
          int y = i - a, z = j - b;
          if (replicate) {
            y = std::clamp(y, 0, h - 1);
            z = std::clamp(z, 0, w - 1);
          } else if (y < 0 || y >= h || z < 0 || z >= w) {
            continue;
          }
          acc += k(a, b) * x.at(y, z);
        }
      out.at(i, j) = acc;
    }
  return out;
}

inline double max_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testing
