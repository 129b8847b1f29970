#pragma once

// Analytic, seeded multiscale test signal. Each of two scalar fields is a bank
// of random sinusoids grouped in octaves (octave o spans frequencies
// [2^{o-1}, 2^o) * f_min with gain gamma^max(o,0)). The slice at scale s is
// the Gaussian scale space of that signal at bandwidth B = f_min * 2^s:
// every component is attenuated by exp(-2 pi^2 (kappa f / B)^2). Because
// Gaussians compose, slices are exactly related by Gaussian downsampling,
// which makes the oracle a ground truth for the consistency geometry.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "scalespace/core.hpp"
#include "scalespace/image.hpp"
#include "scalespace/resample.hpp"
#include "scalespace/zoom.hpp"

namespace scalespace {

using Color = std::array<float, 3>;

struct OracleConfig {
  std::uint64_t seed = 1;
  double octave_gain = 0.75;
  std::array<Color, 3> color_basis{{{0.10f, 0.12f, 0.30f}, {0.95f, 0.72f, 0.35f}, {0.22f, 0.80f, 0.60f}}};
  ScaleSpaceConfig cfg;
  double kappa = 0.4;               // must match the downsampling kernel
  int components_per_octave = 16;
  int lowest_octave = -3;
  double field_rms = 0.12;

  DownsampleKernel matching_kernel() const { return {DownsampleKernel::Type::kGaussian, kappa, 3}; }
};

inline void to_json(nlohmann::json& j, const OracleConfig& o) {
  j = nlohmann::json{{"seed", o.seed},
                     {"octave_gain", o.octave_gain},
                     {"color_basis", o.color_basis},
                     {"config", o.cfg},
                     {"kappa", o.kappa},
                     {"components_per_octave", o.components_per_octave},
                     {"lowest_octave", o.lowest_octave},
                     {"field_rms", o.field_rms}};
}

inline void from_json(const nlohmann::json& j, OracleConfig& o) {
  o.seed = j.value("seed", o.seed);
  o.octave_gain = j.value("octave_gain", o.octave_gain);
  if (j.contains("color_basis")) o.color_basis = j.at("color_basis").get<std::array<Color, 3>>();
  if (j.contains("config")) o.cfg = j.at("config").get<ScaleSpaceConfig>();
  o.kappa = j.value("kappa", o.kappa);
  o.components_per_octave = j.value("components_per_octave", o.components_per_octave);
  o.lowest_octave = j.value("lowest_octave", o.lowest_octave);
  o.field_rms = j.value("field_rms", o.field_rms);
}

class ProceduralOracle {
 public:
  struct Component {
    Vec2 frequency;  // cycles per unit extent
    double phase;
    double amplitude;
    int octave;
  };

  explicit ProceduralOracle(OracleConfig config) : config_(std::move(config)) {
    config_.cfg.validate();
    if (!(config_.octave_gain > 0.0 && config_.octave_gain <= 1.0))
      throw ConfigError("octave_gain must lie in (0, 1]");
    std::mt19937_64 rng(config_.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int top = static_cast<int>(std::ceil(config_.cfg.s_max)) + 2;
    double energy = 0.0;
    for (int field = 0; field < 2; ++field) {
      auto& bank = fields_[field];
      for (int o = config_.lowest_octave; o <= top; ++o) {
        const double gain = std::pow(config_.octave_gain, std::max(o, 0));
        for (int k = 0; k < config_.components_per_octave; ++k) {
          const double mag = config_.cfg.f_min * std::exp2(o - 1 + unit(rng));
          const double dir = 2.0 * std::numbers::pi * unit(rng);
          const double phase = 2.0 * std::numbers::pi * unit(rng);
          bank.push_back({{mag * std::cos(dir), mag * std::sin(dir)}, phase, gain, o});
          if (field == 0) energy += gain * gain;
        }
      }
    }
    // Scale so that each field has the requested rms at unlimited bandwidth.
    const double amp = config_.field_rms * std::sqrt(2.0 / energy);
    for (auto& bank : fields_)
      for (auto& c : bank) c.amplitude *= amp;
  }

  const OracleConfig& config() const { return config_; }
  const std::vector<Component>& components(int field) const { return fields_.at(field); }

  /// Gaussian scale-space attenuation of frequency magnitude f at scale s.
  double attenuation(double f, double s) const {
    const double t = config_.kappa * f / (config_.cfg.f_min * std::exp2(s));
    return std::exp(-2.0 * std::numbers::pi * std::numbers::pi * t * t);
  }

  /// Scalar field value (without the 1/3 offset) at world point x, scale s.
  double field(int which, Vec2 x, double s) const {
    double acc = 0.0;
    for (const auto& c : fields_.at(which)) {
      const double h = attenuation(c.frequency.norm(), s);
      if (h < 1e-9) continue;
      acc += c.amplitude * h * std::sin(2.0 * std::numbers::pi * c.frequency.dot(x) + c.phase);
    }
    return acc;
  }

  Color color(double u, double w) const {
    const auto& b = config_.color_basis;
    Color out{};
    for (int ch = 0; ch < 3; ++ch) {
      const double v = b[0][ch] + (1.0 / 3.0 + u) * (b[1][ch] - b[0][ch]) + (1.0 / 3.0 + w) * (b[2][ch] - b[0][ch]);
      out[ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
  }

  Color evaluate(Vec2 x, double s) const { return color(field(0, x, s), field(1, x, s)); }

  /// n x n pixel-center samples of the slice at scale s over the square of
  /// side `side` centered at `center`.
  Image sample_region(Vec2 center, double side, double s, int n) const {
    std::vector<double> xs(n);
    std::vector<double> ys(n);
    for (int i = 0; i < n; ++i) {
      xs[i] = center.x + side * pixel_center(i, n);
      ys[i] = center.y + side * pixel_center(i, n);
    }
    return sample_lattice(xs, ys, s);
  }

  /// Samples on the separable lattice xs x ys (row index follows ys).
  Image sample_lattice(const std::vector<double>& xs, const std::vector<double>& ys, double s) const {
    const int w = static_cast<int>(xs.size());
    const int h = static_cast<int>(ys.size());
    std::array<std::vector<double>, 2> values;
    std::vector<double> sx(w), cx(w), sy(h), cy(h);
    for (int field = 0; field < 2; ++field) {
      auto& v = values[field];
      v.assign(static_cast<std::size_t>(w) * h, 0.0);
      for (const auto& c : fields_[field]) {
        const double a = c.amplitude * attenuation(c.frequency.norm(), s);
        if (std::abs(a) < 1e-12) continue;
        for (int i = 0; i < w; ++i) {
          const double t = 2.0 * std::numbers::pi * c.frequency.x * xs[i] + c.phase;
          sx[i] = a * std::sin(t);
          cx[i] = a * std::cos(t);
        }
        for (int j = 0; j < h; ++j) {
          const double t = 2.0 * std::numbers::pi * c.frequency.y * ys[j];
          sy[j] = std::sin(t);
          cy[j] = std::cos(t);
        }
        for (int j = 0; j < h; ++j) {
          double* row = v.data() + static_cast<std::size_t>(j) * w;
          const double syj = sy[j];
          const double cyj = cy[j];
          for (int i = 0; i < w; ++i) row[i] += sx[i] * cyj + cx[i] * syj;
        }
      }
    }
    Image img(w, h);
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        const std::size_t k = static_cast<std::size_t>(j) * w + i;
        const Color col = color(values[0][k], values[1][k]);
        for (int ch = 0; ch < 3; ++ch) img.at(i, j, ch) = col[ch];
      }
    return img;
  }

 private:
  OracleConfig config_;
  std::array<std::vector<Component>, 2> fields_;
};

/// p x p slice of the oracle at the patch spec.
inline Image oracle_sample_patch(const PatchSpec& spec, int p, const ProceduralOracle& oracle) {
  spec.validate(oracle.config().cfg);
  return oracle.sample_region(spec.center, spec.footprint(), spec.scale, p);
}

/// Zoom sequence into `center` with frames of `resolution` pixels whose
/// footprint is footprint_multiplier * 2^{-s}.
inline ZoomSequence oracle_zoom_sequence(Vec2 center, double s_start, double s_end, int frames,
                                         const ProceduralOracle& oracle, int resolution,
                                         double footprint_multiplier = 1.0) {
  const auto& cfg = oracle.config().cfg;
  if (!(s_start < s_end) || s_end > cfg.s_max || s_start < 0.0)
    throw DomainError("zoom range must satisfy 0 <= s_start < s_end <= s_max");
  if (frames < 2) throw DomainError("zoom sequence needs at least two frames");
  ZoomSequence seq;
  seq.center = center;
  seq.footprint_multiplier = footprint_multiplier;
  seq.scales = zoom_scales(s_start, s_end, frames);
  for (double s : seq.scales)
    seq.frames.push_back(oracle.sample_region(center, footprint_multiplier * std::exp2(-s), s, resolution));
  return seq;
}

/// Analytic trajectory of the frame-0 point `start` through every frame.
inline std::vector<Vec2> oracle_trajectory(const ZoomSequence& seq, Vec2 start) {
  std::vector<Vec2> out;
  for (double s : seq.scales) out.push_back(radial_position(start, seq.resolution(), seq.scales.front(), s));
  return out;
}

}  // namespace scalespace
