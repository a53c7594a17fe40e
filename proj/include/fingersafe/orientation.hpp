#pragma once

#include "fingersafe/graddiff.hpp"
#include "fingersafe/imgcore.hpp"

namespace fingersafe::orientation {

/// Per-pixel ridge angle in [0, pi), stored as a single-channel image.
using OrientationField = imgcore::Image;

inline constexpr int kSmoothingSize = 31;
inline constexpr int kDerivativeSize = 7;
inline constexpr double kDerivativeSigma = 1.0;

OrientationField estimate_orientation(const imgcore::Image& x);

// Same estimator recorded on a tape; x must be a single-channel node.
ad::Var estimate_orientation(ad::Tape& tape, ad::Var x);

/// -mean |sin(|phi_adv - phi|)|, in [-1, 0].
double orientation_distortion_loss(const OrientationField& phi_adv, const OrientationField& phi);
ad::Var orientation_distortion_loss(ad::Tape& tape, ad::Var phi_adv, ad::Var phi);

// Unsigned angle between two ridge directions, folded mod pi into [0, pi/2].
double angular_distance(double a, double b);

// Mean angular_distance over pixels at least `margin` away from the frame.
double mean_angular_error(const OrientationField& a, const OrientationField& b, int margin);

}  // namespace fingersafe::orientation
