#pragma once

// Rendering beyond a single patch. Any rectangle of the pixel lattice at
// scale s (pixel pitch 2^-s / p in world units) is covered by patches on a
// grid with stride p/2; each patch contributes its central p/2 x p/2 crop.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scalespace/checkpoint.hpp"
#include "scalespace/core.hpp"
#include "scalespace/image.hpp"
#include "scalespace/nn/generator.hpp"
#include "scalespace/zoom.hpp"

namespace scalespace {

struct Region {
  double x0 = -0.5;
  double y0 = -0.5;
  double x1 = 0.5;
  double y1 = 0.5;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  void validate() const {
    if (!(x1 > x0 && y1 > y0)) throw DomainError("region must have positive extent");
    const double tol = 1e-9;
    if (x0 < -0.5 - tol || y0 < -0.5 - tol || x1 > 0.5 + tol || y1 > 0.5 + tol)
      throw DomainError("region must lie within [-0.5, 0.5]^2");
  }
};

inline constexpr long long kDefaultPixelBudget = 64LL * 1024 * 1024;

template <typename S>
Image generate_patch(const Generator<S>& g, const std::vector<double>& z, const PatchSpec& spec) {
  spec.validate(g.config().cfg);
  return raw_to_image(g.synthesize(z, spec), g.config().cfg.patch_resolution);
}

inline Image generate_patch(const GeneratorCheckpoint& ck, const std::vector<double>& z, const PatchSpec& spec) {
  return generate_patch(ck.generator, z, spec);
}

/// Renders an n_x x n_y lattice at scale s whose pixel (0, 0) is centered at
/// world point `origin`. Bands of p/2 rows are handed to `sink` top to
/// bottom, so callers can stream the result.
template <typename S>
void render_lattice_bands(const Generator<S>& g, const std::vector<double>& z, double s, Vec2 origin, int n_x, int n_y,
                          const std::function<void(int y0, const Image& band)>& sink) {
  const int p = g.config().cfg.patch_resolution;
  const int half = p / 2;
  const double pitch = std::exp2(-s) / p;
  const int tiles_x = (n_x + half - 1) / half;
  const int tiles_y = (n_y + half - 1) / half;
  for (int ty = 0; ty < tiles_y; ++ty) {
    const int rows = std::min(half, n_y - ty * half);
    Image band(n_x, rows);
    for (int tx = 0; tx < tiles_x; ++tx) {
      const int cols = std::min(half, n_x - tx * half);
      // Patch pixel i covers lattice index tx*half - p/4 + i; its center sits
      // half a patch further.
      const Vec2 center = origin + pitch * Vec2{tx * half + p / 4.0 - 0.5, ty * half + p / 4.0 - 0.5};
      const auto raw = g.synthesize(z, {center, s});
      const Image patch = raw_to_image(raw, p);
      for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x)
          for (int ch = 0; ch < 3; ++ch) band.at(tx * half + x, y, ch) = patch.at(p / 4 + x, p / 4 + y, ch);
    }
    sink(ty * half, band);
  }
}

template <typename S>
Image render_lattice(const Generator<S>& g, const std::vector<double>& z, double s, Vec2 origin, int n_x, int n_y) {
  Image out(n_x, n_y);
  render_lattice_bands<S>(g, z, s, origin, n_x, n_y, [&](int y0, const Image& band) { out.paste(band, 0, y0); });
  return out;
}

/// Pixel-lattice window of a region at scale s: first pixel index and size
/// along each axis, snapped to the global lattice.
struct LatticeWindow {
  long long i0 = 0;
  long long j0 = 0;
  long long nx = 0;
  long long ny = 0;
  double pitch = 0.0;
  Vec2 origin() const { return {-0.5 + (i0 + 0.5) * pitch, -0.5 + (j0 + 0.5) * pitch}; }
};

inline LatticeWindow lattice_window(const ScaleSpaceConfig& cfg, double s, const Region& region) {
  region.validate();
  LatticeWindow w;
  w.pitch = std::exp2(-s) / cfg.patch_resolution;
  w.i0 = std::llround((region.x0 + 0.5) / w.pitch);
  w.j0 = std::llround((region.y0 + 0.5) / w.pitch);
  w.nx = std::llround((region.x1 + 0.5) / w.pitch) - w.i0;
  w.ny = std::llround((region.y1 + 0.5) / w.pitch) - w.j0;
  if (w.nx < 1 || w.ny < 1) throw DomainError("region is smaller than one pixel at this scale");
  return w;
}

/// Slice at scale s over `region`, at the lattice pitch 2^-s / p (whole
/// extent = nyquist_resolution(s) pixels for f_min = p / (2 sqrt 2)).
template <typename S>
Image generate_slice(const Generator<S>& g, const std::vector<double>& z, double s, const Region& region,
                     long long pixel_budget = kDefaultPixelBudget) {
  const auto& cfg = g.config().cfg;
  if (s < 0 || s > cfg.s_max) throw DomainError("slice scale outside [0, s_max]");
  const auto w = lattice_window(cfg, s, region);
  if (w.nx * w.ny > pixel_budget)
    throw DomainError("slice of " + std::to_string(w.nx) + "x" + std::to_string(w.ny) +
                      " pixels exceeds the output budget of " + std::to_string(pixel_budget) + " pixels");
  return render_lattice(g, z, s, w.origin(), static_cast<int>(w.nx), static_cast<int>(w.ny));
}

/// Streams the slice to a PNG band by band; memory stays O(width * p).
template <typename S>
void write_slice_png(const Generator<S>& g, const std::vector<double>& z, double s, const Region& region,
                     const std::filesystem::path& path, long long pixel_budget = kDefaultPixelBudget * 16) {
  const auto w = lattice_window(g.config().cfg, s, region);
  if (w.nx * w.ny > pixel_budget) throw DomainError("slice exceeds the output budget");
  PngRowWriter writer(path, static_cast<int>(w.nx), static_cast<int>(w.ny), 8);
  render_lattice_bands<S>(g, z, s, w.origin(), static_cast<int>(w.nx), static_cast<int>(w.ny),
                          [&](int, const Image& band) {
                            for (int y = 0; y < band.height; ++y) writer.write_row(band.row(y));
                          });
}

/// One zoom frame of `resolution` pixels centered at `center`, covering
/// footprint_multiplier * 2^{-s}.
template <typename S>
Image generator_zoom_frame(const Generator<S>& g, const std::vector<double>& z, Vec2 center, double s, int resolution,
                           double footprint_multiplier = 1.0) {
  // Render at the patch pitch over the footprint, then resample to the
  // frame resolution if the two differ.
  const int p = g.config().cfg.patch_resolution;
  const int n = std::max(1, static_cast<int>(std::lround(footprint_multiplier * p)));
  const double pitch = std::exp2(-s) / p;
  const Vec2 origin = center + pitch * Vec2{0.5 - n / 2.0, 0.5 - n / 2.0};
  Image frame = render_lattice(g, z, s, origin, n, n);
  if (n != resolution) frame = area_resample(frame, 0.0, 0.0, static_cast<double>(n) / resolution, resolution, resolution);
  return frame;
}

/// Zoom frames of `resolution` pixels into `center`, frame i covering
/// footprint_multiplier * 2^{-s_i}; frames are stitched at continuous scale.
template <typename S>
ZoomSequence generator_zoom_sequence(const Generator<S>& g, const std::vector<double>& z, Vec2 center, double s_start,
                                     double s_end, int frames, int resolution, double footprint_multiplier = 1.0) {
  const auto& cfg = g.config().cfg;
  if (!(s_start < s_end) || s_start < 0 || s_end > cfg.s_max)
    throw DomainError("zoom range must satisfy 0 <= s_start < s_end <= s_max");
  if (frames < 2) throw DomainError("zoom sequence needs at least two frames");
  ZoomSequence seq;
  seq.center = center;
  seq.footprint_multiplier = footprint_multiplier;
  seq.scales = zoom_scales(s_start, s_end, frames);
  for (double s : seq.scales) seq.frames.push_back(generator_zoom_frame(g, z, center, s, resolution, footprint_multiplier));
  return seq;
}

/// Seam statistic of a stitched slice: the largest mean absolute
/// neighbor difference across any patch-crop boundary line, and the median
/// of the same statistic over interior lines.
struct SeamReport {
  double max_seam = 0.0;
  double median_interior = 0.0;
  bool ok() const { return max_seam <= 2.0 * median_interior + 1e-12; }
};

inline SeamReport seam_report(const Image& img, int period) {
  std::vector<double> seams;
  std::vector<double> interior;
  auto column_step = [&](int x) {
    double acc = 0.0;
    for (int y = 0; y < img.height; ++y)
      for (int ch = 0; ch < 3; ++ch) acc += std::abs(img.at(x, y, ch) - img.at(x - 1, y, ch));
    return acc / (3.0 * img.height);
  };
  auto row_step = [&](int y) {
    double acc = 0.0;
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < 3; ++ch) acc += std::abs(img.at(x, y, ch) - img.at(x, y - 1, ch));
    return acc / (3.0 * img.width);
  };
  for (int x = 1; x < img.width; ++x) (x % period == 0 ? seams : interior).push_back(column_step(x));
  for (int y = 1; y < img.height; ++y) (y % period == 0 ? seams : interior).push_back(row_step(y));
  SeamReport r;
  for (double v : seams) r.max_seam = std::max(r.max_seam, v);
  if (!interior.empty()) {
    std::nth_element(interior.begin(), interior.begin() + interior.size() / 2, interior.end());
    r.median_interior = interior[interior.size() / 2];
  }
  return r;
}

}  // namespace scalespace
