#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fingersafe/classical.hpp"
#include "fingersafe/graddiff.hpp"
#include "fingersafe/imgcore.hpp"
#include "fingersafe/scatnet.hpp"

namespace fingersafe::attack {

struct ProtectionConfig {
  double epsilon = 8.0 / 255.0;
  int steps = 20;
  double alpha = 1.0 / 255.0;
  double lambda = 1e2;  // weight of the orientation term
  double gamma = 5e2;   // weight of the contrast term
  std::uint64_t seed = 0;
  scatnet::ScatteringConfig surrogate;

  void validate() const;
};

struct LossValues {
  double adversarial = 0.0;
  double orientation = 0.0;
  double contrast = 0.0;
  double total = 0.0;
};

struct TraceRow {
  int iteration = 0;
  LossValues losses;
};

struct ProtectionResult {
  imgcore::Image protected_image;
  imgcore::Image noise;  // protected - clean
  std::vector<TraceRow> trace;  // iterates 0..steps, losses before each update and at the final iterate
};

/// Sign-gradient descent on L_adv + lambda L_O + gamma L_C inside the
/// epsilon ball, [0,1] and the optional mask.
ProtectionResult fingersafe_protect(const imgcore::Image& x, const ProtectionConfig& cfg,
                                    const classical::SegmentationMask* mask = nullptr);
ProtectionResult pgd_baseline(const imgcore::Image& x, const ProtectionConfig& cfg,
                              const classical::SegmentationMask* mask = nullptr);

/// Segments the fingertip, protects the tip crop inside the finger mask, and
/// pastes the result back into the photo.
ProtectionResult protect_photo(const imgcore::Image& photo, const ProtectionConfig& cfg);

struct ObjectiveTerms {
  ad::Var adversarial, orientation, contrast, total;
};

/// Clean-image quantities the objective compares against.
struct CleanReference {
  imgcore::Image orientation;
  imgcore::Image contrast;
  scatnet::FeatureVector features;
};
CleanReference make_clean_reference(const imgcore::Image& clean, const ProtectionConfig& cfg);

/// Records L_adv, L_O, L_C and the weighted total for the iterate x against
/// the clean image. psi is the constant saliency weight of the contrast term;
/// when null it is computed from x's current luminance.
ObjectiveTerms record_objective(ad::Tape& tape, ad::Var x, const imgcore::Image& clean, const ProtectionConfig& cfg,
                                const imgcore::Image* psi = nullptr);
ObjectiveTerms record_objective(ad::Tape& tape, ad::Var x, const CleanReference& ref, const ProtectionConfig& cfg,
                                const imgcore::Image* psi = nullptr);

// Losses of an adversarial image against its clean original, no gradients.
LossValues evaluate_losses(const imgcore::Image& clean, const imgcore::Image& adv, const ProtectionConfig& cfg);

imgcore::Image project_linf(const imgcore::Image& candidate, const imgcore::Image& origin, double epsilon);

inline constexpr int kBlurKernelSize = 15;
inline constexpr int kPixelBlock = 10;

imgcore::Image blur_baseline(const imgcore::Image& x, double sigma, const classical::SegmentationMask* mask = nullptr);
imgcore::Image pixelize_baseline(const imgcore::Image& x, double fraction, int block = kPixelBlock,
                                 const classical::SegmentationMask* mask = nullptr);

/// mean relu((omega_adv - omega) * psi_adv) on luminance.
double naturalness(const imgcore::Image& clean, const imgcore::Image& adv);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace fingersafe::attack
