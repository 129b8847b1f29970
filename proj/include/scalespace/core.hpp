#pragma once

// Continuous scale-space coordinates: bandwidth/scale conversion, per-scale
// Nyquist resolution and the patch coordinate transform.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace scalespace {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

/// Default base bandwidth. With this value nyquist_resolution(s) == 256 * 2^s.
inline const double kDefaultMinFrequency = 128.0 / std::numbers::sqrt2;

/// Base bandwidth for which nyquist_resolution(0) equals the patch resolution.
inline double min_frequency_for_patch(int patch_resolution) {
  return patch_resolution / (2.0 * std::numbers::sqrt2);
}

struct ScaleSpaceConfig {
  double f_min = kDefaultMinFrequency;  // cycles per unit image extent
  double s_max = 8.0;
  int patch_resolution = 256;

  void validate() const {
    if (!(f_min > 0.0)) throw ConfigError("f_min must be positive");
    if (!(s_max >= 0.0)) throw ConfigError("s_max must be non-negative");
    if (patch_resolution < 8 || patch_resolution % 2 != 0)
      throw ConfigError("patch_resolution must be even and >= 8");
  }

  /// Number of unit-width scale bins covering [0, s_max).
  int bin_count() const { return std::max(1, static_cast<int>(std::ceil(s_max))); }

  friend bool operator==(const ScaleSpaceConfig&, const ScaleSpaceConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ScaleSpaceConfig& c) {
  j = nlohmann::json{{"f_min", c.f_min}, {"s_max", c.s_max}, {"patch_resolution", c.patch_resolution}};
}

inline void from_json(const nlohmann::json& j, ScaleSpaceConfig& c) {
  c.f_min = j.at("f_min").get<double>();
  c.s_max = j.at("s_max").get<double>();
  c.patch_resolution = j.at("patch_resolution").get<int>();
  c.validate();
}

/// Scale-space slice identified by a continuous center and scale.
struct PatchSpec {
  Vec2 center;
  double scale = 0.0;

  void validate(const ScaleSpaceConfig& cfg) const {
    if (!(center.x >= -0.5 && center.x <= 0.5 && center.y >= -0.5 && center.y <= 0.5))
      throw DomainError("patch center outside [-0.5, 0.5]^2");
    if (!(scale >= 0.0 && scale <= cfg.s_max))
      throw DomainError("patch scale " + std::to_string(scale) + " outside [0, s_max]");
  }

  /// Side length of the patch footprint in world units.
  double footprint() const { return std::exp2(-scale); }
};

inline double scale_of_bandwidth(double f, const ScaleSpaceConfig& cfg) {
  if (!(f > 0.0) || f < cfg.f_min)
    throw DomainError("bandwidth must be >= f_min");
  return std::log2(f / cfg.f_min);
}

inline double bandwidth_of_scale(double s, const ScaleSpaceConfig& cfg) {
  if (!(s >= 0.0)) throw DomainError("scale must be non-negative");
  return cfg.f_min * std::exp2(s);
}

/// Pixels per side needed to sample the slice at scale s without aliasing,
/// including the diagonal factor sqrt(2).
inline long long nyquist_resolution(double s, const ScaleSpaceConfig& cfg) {
  if (!(s >= 0.0)) throw DomainError("scale must be non-negative");
  const double r = std::numbers::sqrt2 * cfg.f_min * std::exp2(s + 1.0);
  // Guard against ceil() of values that are integral up to rounding.
  const double nearest = std::round(r);
  if (std::abs(r - nearest) <= 1e-9 * std::max(1.0, r)) return static_cast<long long>(nearest);
  return static_cast<long long>(std::ceil(r));
}

/// Row-major p x p grid of 2D coordinates.
struct CoordGrid {
  int size = 0;
  std::vector<Vec2> points;

  Vec2 at(int row, int col) const { return points[static_cast<std::size_t>(row) * size + col]; }
};

/// T(c; c_p, s_p) = 2^{-s_p} (c - c_p), applied elementwise.
inline Vec2 transform_coord(Vec2 c, const PatchSpec& spec) {
  return std::exp2(-spec.scale) * (c - spec.center);
}

inline CoordGrid transform_coords(const CoordGrid& grid, const PatchSpec& spec) {
  CoordGrid out{grid.size, {}};
  out.points.reserve(grid.points.size());
  for (const Vec2& c : grid.points) out.points.push_back(transform_coord(c, spec));
  return out;
}

/// Pixel-center coordinate of index i on a p-pixel axis spanning [-0.5, 0.5].
inline double pixel_center(int i, int p) { return (i + 0.5) / p - 0.5; }

/// Local pixel-center grid of a patch, transformed by the patch spec.
inline CoordGrid make_coord_grid(int p, const PatchSpec& spec) {
  if (p < 1) throw DomainError("grid resolution must be positive");
  CoordGrid grid{p, {}};
  grid.points.reserve(static_cast<std::size_t>(p) * p);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c) grid.points.push_back({pixel_center(c, p), pixel_center(r, p)});
  return transform_coords(grid, spec);
}

/// World position of a patch-local coordinate: the patch is centered at
/// spec.center with side 2^{-s}.
inline Vec2 patch_to_world(Vec2 local, const PatchSpec& spec) {
  return spec.center + std::exp2(-spec.scale) * local;
}

}  // namespace scalespace
