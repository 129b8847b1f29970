#pragma once

#include <cmath>
#include <vector>

#include "scalespace/core.hpp"
#include "scalespace/image.hpp"

namespace scalespace {

/// Frames zooming into a fixed world point. Frame i covers a square of side
/// footprint_multiplier * 2^{-scales[i]} centered at `center`; pixel k of a
/// frame is centered at k + 0.5 so the zoom center sits at (n/2, n/2).
struct ZoomSequence {
  std::vector<Image> frames;
  std::vector<double> scales;
  Vec2 center;
  double footprint_multiplier = 1.0;

  int resolution() const { return frames.empty() ? 0 : frames.front().width; }

  void validate() const {
    if (frames.size() != scales.size()) throw DomainError("zoom sequence frame/scale count mismatch");
    for (std::size_t i = 1; i < scales.size(); ++i)
      if (!(scales[i] > scales[i - 1])) throw DomainError("zoom scales must be strictly increasing");
    for (const auto& f : frames)
      if (f.width != resolution() || f.height != resolution())
        throw DomainError("zoom frames must share one square resolution");
  }
};

/// Scales spaced evenly in log-magnification between s_start and s_end.
inline std::vector<double> zoom_scales(double s_start, double s_end, int frames) {
  if (frames < 1) throw DomainError("zoom needs at least one frame");
  std::vector<double> s(frames, s_start);
  for (int i = 1; i < frames; ++i) s[i] = s_start + (s_end - s_start) * i / (frames - 1);
  return s;
}

/// Exact position in frame `to` of the point at `pos` in frame `from`
/// (frame-pixel coordinates): a radial expansion about the frame center by
/// 2^{scales[to] - scales[from]}.
inline Vec2 radial_position(Vec2 pos, int resolution, double s_from, double s_to) {
  const Vec2 c{resolution / 2.0, resolution / 2.0};
  return c + std::exp2(s_to - s_from) * (pos - c);
}

}  // namespace scalespace
