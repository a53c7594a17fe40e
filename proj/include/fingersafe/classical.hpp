#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "fingersafe/imgcore.hpp"

namespace fingersafe::classical {

enum class MinutiaKind { Ending, Bifurcation };

struct Minutia {
  double x = 0.0;  // column
  double y = 0.0;  // row
  double angle = 0.0;  // radians in [0, 2pi), measured as atan2(dy, dx) in image axes
  MinutiaKind kind = MinutiaKind::Ending;
};

struct MinutiaeSet {
  std::vector<Minutia> minutiae;
  int height = 0;
  int width = 0;

  std::size_t size() const { return minutiae.size(); }
  bool empty() const { return minutiae.empty(); }
};

/// Boolean H x W mask (one byte per pixel, 0 or 1) plus the bounding box of
/// its foreground.
struct SegmentationMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
  imgcore::CropBox box;

  bool at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col] != 0; }
  std::size_t area() const;
  static SegmentationMask full(int height, int width);
};

struct FrangiParams {
  std::vector<double> scales{1.0, 1.5, 2.0};
  double beta = 0.5;
};

/// Multi-scale Hessian vesselness for dark ridges on a light field, min-max
/// normalized to [0, 1].
imgcore::Image frangi_enhance(const imgcore::Image& x, const FrangiParams& params = {});

inline constexpr int kThresholdWindow = 15;

imgcore::Image adaptive_threshold(const imgcore::Image& ridge, int window = kThresholdWindow, double offset = 0.0);
// Zhang-Suen thinning of a {0,1} image, iterated to a fixpoint.
imgcore::Image thin(const imgcore::Image& binary);
imgcore::Image binarize_and_thin(const imgcore::Image& ridge);

/// Neighbour bits, clockwise from north: bit k set <=> neighbour k is foreground.
/// Order: N, NE, E, SE, S, SW, W, NW.
std::uint8_t neighbour_pattern(const imgcore::Image& skeleton, int row, int col);
int crossing_number(std::uint8_t pattern);

inline constexpr double kBorderMargin = 8.0;
inline constexpr double kMinSeparation = 4.0;
inline constexpr int kTraceLength = 8;

/// Every skeleton pixel with crossing number 1 or 3, before any filtering.
MinutiaeSet raw_minutiae(const imgcore::Image& skeleton);

/// Crossing-number minutiae, minus those near the mask border or frame and
/// those in close pairs, with angles from local ridge tracing.
MinutiaeSet extract_minutiae(const imgcore::Image& skeleton, const SegmentationMask& mask);
MinutiaeSet extract_minutiae(const imgcore::Image& skeleton);

struct MatchParams {
  double distance_tolerance = 12.0;
  double angle_tolerance = 20.0 * 3.14159265358979323846 / 180.0;
};

/// Best 2m / (|a| + |b|) over reference-pair rigid alignments, symmetrized.
double match_minutiae(const MinutiaeSet& a, const MinutiaeSet& b, const MatchParams& params = {});

/// Skin-tone fraction ranges in normalized rgb.
struct SkinRule {
  double r_lo = 0.36, r_hi = 0.465;
  double g_lo = 0.28, g_hi = 0.363;
};

inline constexpr double kTipFraction = 0.55;

struct FingertipCrop {
  SegmentationMask mask;   // whole finger component
  imgcore::CropBox crop_box;  // tip region along the major axis
  imgcore::Image cropped;
};

FingertipCrop segment_fingertip(const imgcore::Image& photo, const SkinRule& rule = {}, double tip_fraction = kTipFraction);

// Mask restricted to a box, as a mask over the full frame.
SegmentationMask restrict_to_box(const SegmentationMask& mask, const imgcore::CropBox& box);
SegmentationMask crop_mask(const SegmentationMask& mask, const imgcore::CropBox& box);
// Writes patch into a copy of base at the box offset.
imgcore::Image paste(const imgcore::Image& base, const imgcore::Image& patch, const imgcore::CropBox& box);

/// Full pipeline used as the classical recognizer: luminance, Frangi,
/// binarize and thin, skin mask (full frame if segmentation fails), extract.
MinutiaeSet minutiae_from_image(const imgcore::Image& x);

void write_csv(std::ostream& out, const MinutiaeSet& set);
void write_mask_png(const SegmentationMask& mask, const std::filesystem::path& path);

}  // namespace fingersafe::classical
