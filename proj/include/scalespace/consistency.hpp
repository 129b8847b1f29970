#pragma once

// Geometry of the cross-scale consistency comparison: a fine patch at
// (c, s) is downsampled by 2^ds and compared with the central crop of the
// coarse patch at (c, s - ds), over the pixels both patches cover.

#include <cmath>
#include <memory>

#include "scalespace/core.hpp"
#include "scalespace/image.hpp"
#include "scalespace/resample.hpp"

namespace scalespace {

/// Pluggable feature distance added to the l1 term (for example a learned
/// perceptual metric). Returns the distance and, if requested, gradients
/// with respect to both inputs.
struct PerceptualDistance {
  virtual ~PerceptualDistance() = default;
  virtual double distance(const Image& a, const Image& b, Image* grad_a, Image* grad_b) const = 0;
};

struct ConsistencyLossConfig {
  double weight = 2.0;            // lambda_c
  double l1_weight = 1.0;
  double perceptual_weight = 0.0;
  DownsampleKernel kernel;
  std::shared_ptr<const PerceptualDistance> perceptual;  // used when perceptual_weight > 0

  void validate() const {
    if (weight < 0 || l1_weight < 0 || perceptual_weight < 0)
      throw ConfigError("consistency loss weights must be non-negative");
    if (perceptual_weight > 0 && !perceptual)
      throw ConfigError("perceptual_weight > 0 requires a perceptual distance plugin");
  }
};

inline constexpr int kMinComparisonSize = 4;

class ConsistencyGeometry {
 public:
  /// samples_per_cycle: patch pixels per cycle of the patch bandwidth
  /// (p / f_min).
  ConsistencyGeometry(int p, double delta_s, const DownsampleKernel& kernel, double samples_per_cycle)
      : p_(p), delta_s_(delta_s) {
    if (!(delta_s > 0.0)) throw DomainError("scale offset must be positive");
    factor_ = std::exp2(delta_s);
    // Nearest size with the parity of p so the crop is centered exactly.
    const double target = p * std::exp2(-delta_s);
    m_ = 2 * static_cast<int>(std::lround(target / 2.0));
    if (p % 2 != 0) m_ = 2 * static_cast<int>(std::floor(target / 2.0)) + 1;
    if (m_ < kMinComparisonSize) return;
    KernelProfile profile(kernel, factor_, samples_per_cycle);
    const double overhang = std::max(0.0, (m_ * factor_ - p) / 2.0);
    margin_ = static_cast<int>(std::ceil(profile.radius() + overhang + 1.0));
    const double x0 = margin_ + p / 2.0 + (0.5 - m_ / 2.0) * factor_;
    resampler_ = make_lattice_resampler(p + 2 * margin_, p + 2 * margin_, x0, x0, factor_, m_, m_, profile);
  }

  bool valid() const { return m_ >= kMinComparisonSize; }
  int patch_resolution() const { return p_; }
  double delta_s() const { return delta_s_; }
  double factor() const { return factor_; }
  /// Extra pixels rendered on each side of the fine patch.
  int margin() const { return margin_; }
  int fine_resolution() const { return p_ + 2 * margin_; }
  int compare_size() const { return m_; }
  int crop_offset() const { return (p_ - m_) / 2; }
  const SeparableResampler& resampler() const { return resampler_; }

  Image downsample_fine(const Image& fine_extended) const { return resampler_.apply(fine_extended); }
  Image crop_coarse(const Image& coarse) const { return coarse.crop(crop_offset(), crop_offset(), m_, m_); }

 private:
  int p_;
  double delta_s_;
  double factor_ = 1.0;
  int m_ = 0;
  int margin_ = 0;
  SeparableResampler resampler_;
};

struct ConsistencyResult {
  double loss = 0.0;
  bool skipped = false;
  Image grad_fine;    // w.r.t. the extended fine patch, empty unless routed there
  Image grad_coarse;  // w.r.t. the p x p coarse patch, empty unless routed there
};

enum class GradientRoute { kNone, kFine, kCoarse };

/// Distance between the downsampled fine patch and the coarse crop, with
/// gradient routed to at most one side.
inline ConsistencyResult consistency_distance(const ConsistencyGeometry& geo, const Image& fine_extended,
                                              const Image& coarse, const ConsistencyLossConfig& cfg,
                                              GradientRoute route) {
  ConsistencyResult r;
  if (!geo.valid()) {
    r.skipped = true;
    return r;
  }
  const Image down = geo.downsample_fine(fine_extended);
  const Image crop = geo.crop_coarse(coarse);
  const double n = static_cast<double>(down.data.size());
  // Gradients of the distance w.r.t. the downsampled fine and the crop.
  Image g_down(down.width, down.height);
  Image g_crop(crop.width, crop.height);
  double l1 = 0.0;
  for (std::size_t i = 0; i < down.data.size(); ++i) {
    const double d = down.data[i] - crop.data[i];
    l1 += std::abs(d);
    const auto g = static_cast<float>(cfg.l1_weight * ((d > 0) - (d < 0)) / n);
    g_down.data[i] = g;
    g_crop.data[i] = -g;
  }
  r.loss = cfg.l1_weight * l1 / n;
  if (cfg.perceptual_weight > 0 && cfg.perceptual) {
    Image ga;
    Image gb;
    r.loss += cfg.perceptual_weight * cfg.perceptual->distance(down, crop, &ga, &gb);
    for (std::size_t i = 0; i < g_down.data.size(); ++i) {
      g_down.data[i] += static_cast<float>(cfg.perceptual_weight * ga.data[i]);
      g_crop.data[i] += static_cast<float>(cfg.perceptual_weight * gb.data[i]);
    }
  }
  if (route == GradientRoute::kFine) {
    r.grad_fine = geo.resampler().adjoint(g_down);
  } else if (route == GradientRoute::kCoarse) {
    r.grad_coarse = Image(coarse.width, coarse.height);
    r.grad_coarse.paste(g_crop, geo.crop_offset(), geo.crop_offset());
  }
  return r;
}

}  // namespace scalespace
