#include "fingersafe/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "fingersafe/errors.hpp"
#include "fingersafe/orientation.hpp"
#include "fingersafe/perception.hpp"

namespace fingersafe::attack {

using imgcore::Image;
using classical::SegmentationMask;

void ProtectionConfig::validate() const {
  if (!(epsilon > 0.0) || epsilon > 1.0) throw ConfigError("epsilon must lie in (0, 1]");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(lambda >= 0.0) || !(gamma >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

namespace {

const scatnet::ScatteringNetwork& network_for(const scatnet::ScatteringConfig& cfg) {
  const auto& shared = scatnet::default_network();
  if (shared.config() == cfg) return shared;
  thread_local std::unique_ptr<scatnet::ScatteringNetwork> custom;
  if (!custom || !(custom->config() == cfg)) custom = std::make_unique<scatnet::ScatteringNetwork>(cfg);
  return *custom;
}

CleanReference reference_for(const Image& x, const scatnet::ScatteringNetwork& net) {
  Image gray = imgcore::to_luminance(x);
  return {orientation::estimate_orientation(gray), perception::local_contrast(gray), net.features(x)};
}

ObjectiveTerms record_terms(ad::Tape& tape, ad::Var x, const CleanReference& ref, const scatnet::ScatteringNetwork& net,
                            double lambda, double gamma, const Image* psi = nullptr) {
  ad::Var gray = tape.luminance(x);
  ad::Var phi_adv = orientation::estimate_orientation(tape, gray);
  ad::Var omega_adv = perception::local_contrast(tape, gray);
  ad::Var psi_adv = tape.constant(psi ? *psi : perception::spectral_saliency(tape.value(gray).to_image()));
  ObjectiveTerms o;
  o.orientation = orientation::orientation_distortion_loss(tape, phi_adv, tape.constant(ref.orientation));
  o.contrast = perception::contrast_suppression_loss(tape, omega_adv, tape.constant(ref.contrast), psi_adv);
  o.adversarial = scatnet::adversarial_loss(tape, net.features(tape, x), ref.features);
  o.total = tape.add(o.adversarial, tape.add(tape.scale(o.orientation, lambda), tape.scale(o.contrast, gamma)));
  return o;
}

LossValues read_losses(const ad::Tape& tape, const ObjectiveTerms& o) {
  return {tape.scalar_value(o.adversarial), tape.scalar_value(o.orientation), tape.scalar_value(o.contrast),
          tape.scalar_value(o.total)};
}

bool finite(const LossValues& v) {
  return std::isfinite(v.adversarial) && std::isfinite(v.orientation) && std::isfinite(v.contrast) &&
         std::isfinite(v.total);
}

[[noreturn]] void abort_numerical(const std::vector<TraceRow>& trace) {
  std::string msg = "non-finite loss at iteration " + std::to_string(trace.back().iteration) + "; trace:";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, " [%d: adv=%g o=%g c=%g total=%g]", r.iteration, r.losses.adversarial,
                  r.losses.orientation, r.losses.contrast, r.losses.total);
    msg += buf;
  }
  throw NumericalError(msg);
}

void check_inputs(const Image& x, const SegmentationMask* mask) {
  if (x.empty()) throw ContractError("cannot protect an empty image");
  if (x.channels() != 1 && x.channels() != 3) throw ShapeError("protection expects a gray or RGB image");
  if (!x.all_finite()) throw ContractError("input image has non-finite values");
  if (mask) {
    if (mask->height != x.height() || mask->width != x.width()) throw ShapeError("mask and image differ in size");
    if (mask->area() == 0) throw ContractError("protection mask is empty");
  }
}

}  // namespace

CleanReference make_clean_reference(const Image& clean, const ProtectionConfig& cfg) {
  return reference_for(clean, network_for(cfg.surrogate));
}

ObjectiveTerms record_objective(ad::Tape& tape, ad::Var x, const CleanReference& ref, const ProtectionConfig& cfg,
                                const Image* psi) {
  return record_terms(tape, x, ref, network_for(cfg.surrogate), cfg.lambda, cfg.gamma, psi);
}

ObjectiveTerms record_objective(ad::Tape& tape, ad::Var x, const Image& clean, const ProtectionConfig& cfg,
                                const Image* psi) {
  return record_objective(tape, x, make_clean_reference(clean, cfg), cfg, psi);
}

Image project_linf(const Image& candidate, const Image& origin, double epsilon) {
  if (!candidate.same_shape(origin)) throw ShapeError("project_linf: shape mismatch");
  Image out = candidate;
  auto o = origin.data();
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::clamp(std::clamp(d[i], o[i] - epsilon, o[i] + epsilon), 0.0, 1.0);
  return out;
}

ProtectionResult fingersafe_protect(const Image& x, const ProtectionConfig& cfg, const SegmentationMask* mask) {
  cfg.validate();
  check_inputs(x, mask);
  const auto& net = network_for(cfg.surrogate);
  const CleanReference ref = reference_for(x, net);
  const int c = x.channels();
  const std::size_t np = x.pixel_count();

  // Gradients vanish exactly at the clean image (every term sits on a kink),
  // so pixels with zero gradient move in a seeded random direction.
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> tie(np);

  ProtectionResult result;
  Image current = x;
  for (int it = 0;; ++it) {
    ad::Tape tape;
    ad::Var leaf = tape.leaf(current);
    const ObjectiveTerms obj = record_terms(tape, leaf, ref, net, cfg.lambda, cfg.gamma);
    result.trace.push_back({it, read_losses(tape, obj)});
    if (!finite(result.trace.back().losses)) abort_numerical(result.trace);
    if (it == cfg.steps) break;

    const ad::Tensor grad = tape.backward(obj.total, leaf);
    for (auto& t : tie) t = (rng() >> 63) ? 1.0 : -1.0;
    Image next = current;
    auto nd = next.data();
    for (std::size_t p = 0; p < np; ++p) {
      if (mask && !mask->pixels[p]) continue;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t k = p * c + ch;
        const double g = grad.data[k];
        if (!std::isfinite(g)) abort_numerical(result.trace);
        const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : tie[p]);
        nd[k] -= cfg.alpha * s;
      }
    }
    current = project_linf(next, x, cfg.epsilon);
  }

  result.protected_image = std::move(current);
  result.noise = result.protected_image;
  auto nd = result.noise.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < nd.size(); ++i) nd[i] -= xd[i];
  return result;
}

ProtectionResult pgd_baseline(const Image& x, const ProtectionConfig& cfg, const SegmentationMask* mask) {
  ProtectionConfig plain = cfg;
  plain.lambda = 0.0;
  plain.gamma = 0.0;
  return fingersafe_protect(x, plain, mask);
}

ProtectionResult protect_photo(const Image& photo, const ProtectionConfig& cfg) {
  const classical::FingertipCrop seg = classical::segment_fingertip(photo);
  const SegmentationMask tip_mask = classical::crop_mask(seg.mask, seg.crop_box);
  ProtectionResult local = fingersafe_protect(seg.cropped, cfg, &tip_mask);
  ProtectionResult out;
  out.protected_image = classical::paste(photo, local.protected_image, seg.crop_box);
  out.noise = classical::paste(Image(photo.height(), photo.width(), photo.channels()), local.noise, seg.crop_box);
  out.trace = std::move(local.trace);
  return out;
}

LossValues evaluate_losses(const Image& clean, const Image& adv, const ProtectionConfig& cfg) {
  if (!clean.same_shape(adv)) throw ShapeError("evaluate_losses: shape mismatch");
  const auto& net = network_for(cfg.surrogate);
  const CleanReference ref = reference_for(clean, net);
  ad::Tape tape;
  const ObjectiveTerms obj = record_terms(tape, tape.constant(adv), ref, net, cfg.lambda, cfg.gamma);
  return read_losses(tape, obj);
}

Image blur_baseline(const Image& x, double sigma, const SegmentationMask* mask) {
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive");
  if (mask && (mask->height != x.height() || mask->width != x.width())) throw ShapeError("mask and image differ in size");
  Image blurred = imgcore::conv2d(x, imgcore::gaussian_kernel(kBlurKernelSize, sigma));
  if (!mask) return blurred;
  Image out = x;
  const int c = x.channels();
  for (std::size_t p = 0; p < x.pixel_count(); ++p)
    if (mask->pixels[p])
      for (int ch = 0; ch < c; ++ch) out.data()[p * c + ch] = blurred.data()[p * c + ch];
  return out;
}

Image pixelize_baseline(const Image& x, double fraction, int block, const SegmentationMask* mask) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("pixelize fraction must lie in (0, 1]");
  if (block < 1) throw ConfigError("pixelize block must be >= 1");
  if (mask && (mask->height != x.height() || mask->width != x.width())) throw ShapeError("mask and image differ in size");
  const int h = x.height(), w = x.width(), c = x.channels();
  auto inside = [&](int i, int j) { return !mask || mask->at(i, j); };

  double cy = 0, cx = 0, area = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (inside(i, j)) {
        cy += i;
        cx += j;
        area += 1;
      }
  if (area == 0) return x;
  cy /= area;
  cx /= area;

  struct Block {
    int top, left;
    double dist;
    int covered;
  };
  std::vector<Block> blocks;
  for (int top = 0; top < h; top += block)
    for (int left = 0; left < w; left += block) {
      int covered = 0;
      for (int i = top; i < std::min(top + block, h); ++i)
        for (int j = left; j < std::min(left + block, w); ++j) covered += inside(i, j);
      if (covered == 0) continue;
      const double by = top + 0.5 * (std::min(top + block, h) - top) - 0.5;
      const double bx = left + 0.5 * (std::min(left + block, w) - left) - 0.5;
      blocks.push_back({top, left, std::hypot(by - cy, bx - cx), covered});
    }
  std::stable_sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) { return a.dist < b.dist; });

  Image out = x;
  double done = 0;
  for (const Block& b : blocks) {
    if (done >= fraction * area) break;
    done += b.covered;
    const int bottom = std::min(b.top + block, h), right = std::min(b.left + block, w);
    const double count = static_cast<double>((bottom - b.top) * (right - b.left));
    for (int ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (int i = b.top; i < bottom; ++i)
        for (int j = b.left; j < right; ++j) mean += x.at(i, j, ch);
      mean /= count;
      for (int i = b.top; i < bottom; ++i)
        for (int j = b.left; j < right; ++j) out.at(i, j, ch) = mean;
    }
  }
  return out;
}

double naturalness(const Image& clean, const Image& adv) {
  if (!clean.same_shape(adv)) throw ShapeError("naturalness: shape mismatch");
  const Image g0 = imgcore::to_luminance(clean);
  const Image g1 = imgcore::to_luminance(adv);
  return perception::contrast_suppression_loss(perception::local_contrast(g1), perception::local_contrast(g0),
                                               perception::spectral_saliency(g1));
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "iteration,L_adv,L_O,L_C,total\n";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g\n", r.iteration, r.losses.adversarial,
                  r.losses.orientation, r.losses.contrast, r.losses.total);
    out << buf;
  }
}

}  // namespace fingersafe::attack
