#pragma once

#include "fingersafe/graddiff.hpp"
#include "fingersafe/imgcore.hpp"

namespace fingersafe::perception {

// Single-channel maps sharing the input's H x W.
using ContrastMap = imgcore::Image;
using SaliencyMap = imgcore::Image;

inline constexpr double kCenterRadius = 2.0;
inline constexpr double kSurroundRadius = 4.0;
inline constexpr double kSurroundGain = 0.85;
inline constexpr int kCenterSize = 13;
inline constexpr int kSurroundSize = 25;
inline constexpr int kResidualBoxSize = 3;
inline constexpr int kSaliencySmoothSize = 9;
inline constexpr double kLogEpsilon = 1e-8;

// Unnormalized centre and surround receptive fields.
const imgcore::Kernel& center_kernel();
const imgcore::Kernel& surround_kernel();

/// (Gc*x - Gs*x) / (Gc*x + Gs*x + 1e-8)
ContrastMap local_contrast(const imgcore::Image& x);
ad::Var local_contrast(ad::Tape& tape, ad::Var x);

/// Spectral-residual attention: G9 * |ifft2(exp(R + iP))|^2 with
/// R = log(|f| + 1e-8) - box3 * log(|f| + 1e-8) and P the phase of fft2(x).
SaliencyMap spectral_saliency(const imgcore::Image& x);
ad::Var spectral_saliency(ad::Tape& tape, ad::Var x);

/// mean relu((omega_adv - omega) * psi_adv); psi_adv acts as a constant weight.
double contrast_suppression_loss(const ContrastMap& omega_adv, const ContrastMap& omega, const SaliencyMap& psi_adv);
ad::Var contrast_suppression_loss(ad::Tape& tape, ad::Var omega_adv, ad::Var omega, ad::Var psi_adv);

}  // namespace fingersafe::perception
