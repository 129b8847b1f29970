#pragma once

// Binned random Fourier features. Bin k holds frequencies (cycles per unit
// extent) with magnitude in (2^{s_base + ds (k-1)}, 2^{s_base + ds k}] and is
// blended in around scale ds * k. Features are evaluated at world positions
// c_p + 2^{-s} c_hat, so a feature's frequency in cycles per patch is
// |f| 2^{-s}.

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "scalespace/core.hpp"

namespace scalespace {

struct BinningConfig {
  double delta_s_bin = 3.0;
  double s_base = 6.0;
  int features_per_bin = 512;

  void validate() const {
    if (!(delta_s_bin > 0.0)) throw ConfigError("binning.delta_s_bin must be positive");
    if (features_per_bin < 1) throw ConfigError("binning.features_per_bin must be at least 1");
  }

  int bin_count(double s_max) const { return std::max(1, static_cast<int>(std::ceil(s_max / delta_s_bin - 1e-12))); }
  double max_magnitude(int k) const { return std::exp2(s_base + delta_s_bin * k); }
  /// Scale at which bin k reaches full weight.
  double full_scale(int k) const { return delta_s_bin * k; }
};

inline void to_json(nlohmann::json& j, const BinningConfig& b) {
  j = nlohmann::json{{"delta_s_bin", b.delta_s_bin}, {"s_base", b.s_base}, {"features_per_bin", b.features_per_bin}};
}

inline void from_json(const nlohmann::json& j, BinningConfig& b) {
  b.delta_s_bin = j.value("delta_s_bin", b.delta_s_bin);
  b.s_base = j.value("s_base", b.s_base);
  b.features_per_bin = j.value("features_per_bin", b.features_per_bin);
  b.validate();
}

/// One injection point: generator layer index and its Nyquist-derived
/// frequency limit in cycles per patch.
struct InjectionLayer {
  int layer = 0;
  double limit = 0.0;
};

struct FrequencyBin {
  int index = 0;
  double max_magnitude = 0.0;
  std::vector<Vec2> frequencies;
  std::vector<double> phases;
  std::vector<int> layer_assignment;  // generator layer index, -1 if unassigned
};

inline void to_json(nlohmann::json& j, const FrequencyBin& b) {
  std::vector<std::array<double, 2>> f;
  for (const auto& v : b.frequencies) f.push_back({v.x, v.y});
  j = nlohmann::json{{"index", b.index},
                     {"max_magnitude", b.max_magnitude},
                     {"frequencies", f},
                     {"phases", b.phases},
                     {"layer_assignment", b.layer_assignment}};
}

inline void from_json(const nlohmann::json& j, FrequencyBin& b) {
  b.index = j.at("index").get<int>();
  b.max_magnitude = j.at("max_magnitude").get<double>();
  b.frequencies.clear();
  for (const auto& f : j.at("frequencies").get<std::vector<std::array<double, 2>>>()) b.frequencies.push_back({f[0], f[1]});
  b.phases = j.at("phases").get<std::vector<double>>();
  b.layer_assignment = j.at("layer_assignment").get<std::vector<int>>();
  if (b.phases.size() != b.frequencies.size() || b.layer_assignment.size() != b.frequencies.size())
    throw DataError("frequency bin arrays have inconsistent lengths");
}

/// Blend weight of bin k at scale s: min(1, max(0, s - ds k + 1)).
inline double weight_of_bin(int k, double s, const BinningConfig& cfg) {
  return std::min(1.0, std::max(0.0, s - cfg.delta_s_bin * k + 1.0));
}

/// Assigns every frequency to the first injection layer whose limit admits
/// its magnitude at the bin's full-blend scale.
inline void assign_layers(std::vector<FrequencyBin>& bins, const std::vector<InjectionLayer>& layers,
                          const BinningConfig& cfg) {
  for (auto& bin : bins) {
    const double shrink = std::exp2(-cfg.full_scale(bin.index));
    bin.layer_assignment.assign(bin.frequencies.size(), -1);
    for (std::size_t j = 0; j < bin.frequencies.size(); ++j) {
      const double eff = bin.frequencies[j].norm() * shrink;
      for (const auto& l : layers)
        if (eff <= l.limit) {
          bin.layer_assignment[j] = l.layer;
          break;
        }
      if (bin.layer_assignment[j] < 0)
        throw ConfigError("frequency bin " + std::to_string(bin.index) + " holds a frequency of effective magnitude " +
                          std::to_string(eff) + " above every layer limit");
    }
  }
}

inline std::vector<FrequencyBin> build_bins(const BinningConfig& cfg, double s_max,
                                            const std::vector<InjectionLayer>& layers, std::uint64_t seed) {
  cfg.validate();
  if (layers.empty()) throw ConfigError("at least one injection layer is required");
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (!(layers[i].limit > layers[i - 1].limit)) throw ConfigError("injection layer limits must be strictly increasing");
  const int K = cfg.bin_count(s_max);
  for (int k = 0; k < K; ++k)
    if (cfg.max_magnitude(k) * std::exp2(-cfg.full_scale(k)) > layers.back().limit)
      throw ConfigError("layer limits too low to host frequency bin " + std::to_string(k) + " at full blend-in");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<FrequencyBin> bins(K);
  for (int k = 0; k < K; ++k) {
    auto& b = bins[k];
    b.index = k;
    b.max_magnitude = cfg.max_magnitude(k);
    const double lo = std::log2(cfg.max_magnitude(k - 1));
    const double hi = std::log2(b.max_magnitude);
    for (int j = 0; j < cfg.features_per_bin; ++j) {
      // 1 - u lies in (0, 1], so the magnitude stays inside (lo, hi].
      const double mag = std::exp2(lo + (hi - lo) * (1.0 - unit(rng)));
      const double dir = 2.0 * std::numbers::pi * unit(rng);
      b.frequencies.push_back({mag * std::cos(dir), mag * std::sin(dir)});
      b.phases.push_back(2.0 * std::numbers::pi * unit(rng));
    }
  }
  assign_layers(bins, layers, cfg);
  return bins;
}

/// Separable grid of patch-local coordinates c_hat; pixel (i, j) sits at
/// (xs[i], ys[j]).
struct AxisGrid {
  std::vector<double> xs;
  std::vector<double> ys;
};

/// Pixel-center grid of n = r + 2 * margin samples on a layer of resolution
/// r: sample i sits at (i + 0.5 - margin) / r - 0.5.
inline AxisGrid layer_grid(int r, int margin) {
  AxisGrid g;
  for (int i = 0; i < r + 2 * margin; ++i) g.xs.push_back((i + 0.5 - margin) / r - 0.5);
  g.ys = g.xs;
  return g;
}

/// Effective per-channel weight of each frequency assigned to `layer` at scale
/// s: the bin weight, forced to zero where the instantaneous frequency
/// exceeds the layer limit.
struct LayerFeatureSet {
  std::vector<Vec2> frequencies;
  std::vector<double> phases;
  std::vector<double> weights;
};

inline LayerFeatureSet layer_features(const std::vector<FrequencyBin>& bins, int layer, double s, double limit,
                                      const BinningConfig& cfg) {
  LayerFeatureSet out;
  const double shrink = std::exp2(-s);
  for (const auto& b : bins) {
    const double w = weight_of_bin(b.index, s, cfg);
    for (std::size_t j = 0; j < b.frequencies.size(); ++j) {
      if (b.layer_assignment[j] != layer) continue;
      out.frequencies.push_back(b.frequencies[j]);
      out.phases.push_back(b.phases[j]);
      out.weights.push_back(b.frequencies[j].norm() * shrink > limit ? 0.0 : w);
    }
  }
  return out;
}

inline int assigned_count(const std::vector<FrequencyBin>& bins, int layer) {
  int n = 0;
  for (const auto& b : bins)
    for (int a : b.layer_assignment) n += a == layer;
  return n;
}

/// Feature maps for `layer`: one row per assigned frequency (bin order, then
/// frequency order), one column per grid pixel (x fastest). Entry is
/// w * sin(2 pi f . (c_p + 2^{-s} c_hat) + phase).
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> rasterize_features(const std::vector<FrequencyBin>& bins,
                                                                         int layer, const PatchSpec& spec,
                                                                         const AxisGrid& grid, double limit,
                                                                         const BinningConfig& cfg) {
  const LayerFeatureSet set = layer_features(bins, layer, spec.scale, limit, cfg);
  const int w = static_cast<int>(grid.xs.size());
  const int h = static_cast<int>(grid.ys.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(set.frequencies.size(), static_cast<Eigen::Index>(w) * h);
  out.setZero();
  const double scale = std::exp2(-spec.scale);
  std::vector<double> sx(w), cx(w), sy(h), cy(h);
  for (std::size_t f = 0; f < set.frequencies.size(); ++f) {
    const double a = set.weights[f];
    if (a == 0.0) continue;
    const Vec2 fr = set.frequencies[f];
    const double base = 2.0 * std::numbers::pi * fr.dot(spec.center) + set.phases[f];
    for (int i = 0; i < w; ++i) {
      const double t = 2.0 * std::numbers::pi * fr.x * scale * grid.xs[i] + base;
      sx[i] = a * std::sin(t);
      cx[i] = a * std::cos(t);
    }
    for (int j = 0; j < h; ++j) {
      const double t = 2.0 * std::numbers::pi * fr.y * scale * grid.ys[j];
      sy[j] = std::sin(t);
      cy[j] = std::cos(t);
    }
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i)
        out(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j) * w + i) =
            static_cast<Scalar>(sx[i] * cy[j] + cx[i] * sy[j]);
  }
  return out;
}

}  // namespace scalespace
