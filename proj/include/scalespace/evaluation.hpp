#pragma once

// Scale-consistency and quality metrics: zoom-sequence flow trajectories
// (bias, angle, EMD against the analytic radial motion), PSNR between
// integer-scale slices, PSNR against ground truth after a global similarity
// alignment, and a per-scale-bin Frechet distance.
//
// Flow is a classical pyramidal Lucas-Kanade tracker, not a learned
// estimator; absolute numbers are not comparable with learned-flow results.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "scalespace/checkpoint.hpp"
#include "scalespace/dataset.hpp"
#include "scalespace/image.hpp"
#include "scalespace/oracle.hpp"
#include "scalespace/render.hpp"
#include "scalespace/resample.hpp"
#include "scalespace/training.hpp"
#include "scalespace/zoom.hpp"

namespace scalespace {

// ---------------------------------------------------------------------------
// Zoom sequences

// frames = 1 yields a single frame at s_start; flow and trajectory metrics
// reject such sequences.

inline ZoomSequence zoom_sequence(const ProceduralOracle& oracle, Vec2 center, double s_start, double s_end, int frames,
                                  int resolution, double footprint_multiplier = 1.0) {
  if (frames != 1) return oracle_zoom_sequence(center, s_start, s_end, frames, oracle, resolution, footprint_multiplier);
  if (s_start < 0 || s_start > oracle.config().cfg.s_max) throw DomainError("zoom scale outside [0, s_max]");
  ZoomSequence seq;
  seq.center = center;
  seq.footprint_multiplier = footprint_multiplier;
  seq.scales = {s_start};
  seq.frames.push_back(oracle.sample_region(center, footprint_multiplier * std::exp2(-s_start), s_start, resolution));
  return seq;
}

template <typename S>
ZoomSequence zoom_sequence(const Generator<S>& g, const std::vector<double>& z, Vec2 center, double s_start, double s_end,
                           int frames, int resolution, double footprint_multiplier = 1.0) {
  if (frames != 1) return generator_zoom_sequence(g, z, center, s_start, s_end, frames, resolution, footprint_multiplier);
  if (s_start < 0 || s_start > g.config().cfg.s_max) throw DomainError("zoom scale outside [0, s_max]");
  ZoomSequence seq;
  seq.center = center;
  seq.footprint_multiplier = footprint_multiplier;
  seq.scales = {s_start};
  seq.frames.push_back(generator_zoom_frame(g, z, center, s_start, resolution, footprint_multiplier));
  return seq;
}

inline ZoomSequence zoom_sequence(const GeneratorCheckpoint& ck, const std::vector<double>& z, Vec2 center, double s_start,
                                  double s_end, int frames, int resolution, double footprint_multiplier = 1.0) {
  return zoom_sequence(ck.generator, z, center, s_start, s_end, frames, resolution, footprint_multiplier);
}

// ---------------------------------------------------------------------------
// Optical flow

/// Single-channel float image; pixel k is centered at k + 0.5.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> v;

  float at(int x, int y) const {
    return v[static_cast<std::size_t>(std::clamp(y, 0, height - 1)) * width + std::clamp(x, 0, width - 1)];
  }
  /// Bilinear lookup at continuous coordinates, clamped at the border.
  float sample(double x, double y) const {
    const double u = x - 0.5;
    const double w = y - 0.5;
    const int ix = static_cast<int>(std::floor(u));
    const int iy = static_cast<int>(std::floor(w));
    const auto tx = static_cast<float>(u - ix);
    const auto ty = static_cast<float>(w - iy);
    const float a = at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx;
    const float b = at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx;
    return a * (1 - ty) + b * ty;
  }
};

inline GrayImage luma(const Image& img) {
  GrayImage g{img.width, img.height, std::vector<float>(static_cast<std::size_t>(img.width) * img.height)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      g.v[static_cast<std::size_t>(y) * img.width + x] =
          0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) + 0.114f * img.at(x, y, 2);
  return g;
}

inline GrayImage gray_half(const GrayImage& g) {
  GrayImage out{std::max(1, g.width / 2), std::max(1, g.height / 2), {}};
  out.v.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.v[static_cast<std::size_t>(y) * out.width + x] =
          0.25f * (g.at(2 * x, 2 * y) + g.at(2 * x + 1, 2 * y) + g.at(2 * x, 2 * y + 1) + g.at(2 * x + 1, 2 * y + 1));
  return out;
}

struct FlowConfig {
  int window_radius = 11;
  int levels = 3;
  int iterations = 30;
  double min_eigenvalue = 1e-6;  // of the mean structure tensor; below: untrackable
  int seed_spacing = 6;          // pixels between seeded grid points
  int border = 11;               // points closer to the edge are terminated
  double prefilter_sigma = 0.0;  // gaussian pre-blur in pixels, 0 = off
};

inline GrayImage gaussian_blur(const GrayImage& g, double sigma) {
  if (sigma <= 0) return g;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<float> k(2 * r + 1);
  float sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (float& v : k) v /= sum;
  GrayImage tmp = g;
  GrayImage out = g;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * g.at(x + i, y);
      tmp.v[static_cast<std::size_t>(y) * g.width + x] = acc;
    }
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(x, y + i);
      out.v[static_cast<std::size_t>(y) * g.width + x] = acc;
    }
  return out;
}

class PyramidalLK {
 public:
  PyramidalLK(const Image& a, const Image& b, const FlowConfig& cfg) : cfg_(cfg) {
    pa_.push_back(gaussian_blur(luma(a), cfg.prefilter_sigma));
    pb_.push_back(gaussian_blur(luma(b), cfg.prefilter_sigma));
    for (int l = 1; l < cfg.levels && pa_.back().width >= 4 * cfg.window_radius; ++l) {
      pa_.push_back(gray_half(pa_.back()));
      pb_.push_back(gray_half(pb_.back()));
    }
  }

  /// Displacement of the point p (frame-a pixel coordinates) into frame b,
  /// or nullopt when the window lacks texture. The window is matched under
  /// an affine warp, so the zoom's local magnification does not bias the
  /// translation estimate.
  std::optional<Vec2> track(Vec2 p) const {
    // Warp of window offset w: b(p + d + (I + A) w) ~ a(p + w).
    Eigen::Matrix<double, 6, 1> params = Eigen::Matrix<double, 6, 1>::Zero();  // dx dy a11 a12 a21 a22
    const int r = cfg_.window_radius;
    const int n = (2 * r + 1) * (2 * r + 1);
    std::vector<float> t(n);
    for (int l = static_cast<int>(pa_.size()) - 1; l >= 0; --l) {
      const double k = std::exp2(-l);
      const Vec2 q = k * p;
      params.head<2>() *= l + 1 < static_cast<int>(pa_.size()) ? 2.0 : 1.0;
      const auto& A = pa_[l];
      const auto& B = pb_[l];
      double gxx = 0, gxy = 0, gyy = 0;
      int i = 0;
      for (int wy = -r; wy <= r; ++wy)
        for (int wx = -r; wx <= r; ++wx, ++i) {
          t[i] = A.sample(q.x + wx, q.y + wy);
          const double ix = 0.5 * (A.sample(q.x + wx + 1, q.y + wy) - A.sample(q.x + wx - 1, q.y + wy));
          const double iy = 0.5 * (A.sample(q.x + wx, q.y + wy + 1) - A.sample(q.x + wx, q.y + wy - 1));
          gxx += ix * ix;
          gxy += ix * iy;
          gyy += iy * iy;
        }
      const double det = gxx * gyy - gxy * gxy;
      const double tr = gxx + gyy;
      const double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4 * det)));
      if (min_eig / n < cfg_.min_eigenvalue) return std::nullopt;
      for (int it = 0; it < cfg_.iterations; ++it) {
        Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        i = 0;
        for (int wy = -r; wy <= r; ++wy)
          for (int wx = -r; wx <= r; ++wx, ++i) {
            const double x = q.x + params[0] + (1 + params[2]) * wx + params[3] * wy;
            const double y = q.y + params[1] + params[4] * wx + (1 + params[5]) * wy;
            const double e = t[i] - B.sample(x, y);
            const double bx = 0.5 * (B.sample(x + 1, y) - B.sample(x - 1, y));
            const double by = 0.5 * (B.sample(x, y + 1) - B.sample(x, y - 1));
            Eigen::Matrix<double, 6, 1> j;
            j << bx, by, bx * wx, bx * wy, by * wx, by * wy;
            h.noalias() += j * j.transpose();
            g.noalias() += e * j;
          }
        const Eigen::Matrix<double, 6, 1> step = h.ldlt().solve(g);
        if (!step.allFinite()) return std::nullopt;
        params += step;
        if (step.head<2>().norm() < 1e-4) break;
      }
    }
    return Vec2{params[0], params[1]};
  }

 private:
  FlowConfig cfg_;
  std::vector<GrayImage> pa_;
  std::vector<GrayImage> pb_;
};

struct Trajectory {
  std::vector<Vec2> points;  // frame-pixel positions, one per frame reached
  bool failed = false;       // lost texture before leaving the frame
};

/// Trajectories of seeded grid points, chained through adjacent-frame flow.
/// Points leaving the trackable area end their trajectory; points whose
/// window is textureless are flagged as failed.
inline std::vector<Trajectory> flow_trajectories(const ZoomSequence& seq, const FlowConfig& cfg = {}) {
  seq.validate();
  if (seq.frames.size() < 2) throw DomainError("flow trajectories need at least two frames");
  const int n = seq.resolution();
  std::vector<Trajectory> tracks;
  // Seeds symmetric about the frame center.
  const double c = n / 2.0;
  const int half = static_cast<int>((c - cfg.border) / cfg.seed_spacing);
  for (int j = -half; j <= half; ++j)
    for (int i = -half; i <= half; ++i) tracks.push_back({{{c + i * cfg.seed_spacing, c + j * cfg.seed_spacing}}, false});
  std::vector<bool> alive(tracks.size(), true);
  auto inside = [&](Vec2 p) { return p.x >= cfg.border && p.y >= cfg.border && p.x <= n - cfg.border && p.y <= n - cfg.border; };
  for (std::size_t f = 0; f + 1 < seq.frames.size(); ++f) {
    const PyramidalLK lk(seq.frames[f], seq.frames[f + 1], cfg);
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      if (!alive[t]) continue;
      const Vec2 p = tracks[t].points.back();
      const auto d = lk.track(p);
      if (!d) {
        tracks[t].failed = true;
        alive[t] = false;
        continue;
      }
      const Vec2 q = p + *d;
      if (!inside(q)) {
        alive[t] = false;
        continue;
      }
      tracks[t].points.push_back(q);
    }
  }
  return tracks;
}

/// Analytic radial trajectory from each track's start, truncated to the
/// number of frames the track reached.
inline std::vector<std::vector<Vec2>> reference_trajectories(const ZoomSequence& seq, const std::vector<Trajectory>& tracks) {
  std::vector<std::vector<Vec2>> out;
  for (const auto& t : tracks) {
    std::vector<Vec2> r;
    for (std::size_t k = 0; k < t.points.size(); ++k)
      r.push_back(radial_position(t.points.front(), seq.resolution(), seq.scales.front(), seq.scales[k]));
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory metrics

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials); returns the total cost.
inline double assignment_cost(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw DomainError("assignment needs a square cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) u[p[j]] += delta, v[j] -= delta;
        else minv[j] -= delta;
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(p[j] - 1, j - 1);
  return total;
}

/// Earth mover's distance between equal-size point sets with uniform
/// weights and Euclidean ground distance (mean matched distance).
inline double point_set_emd(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  if (a.size() != b.size()) throw DomainError("point-set EMD needs equal point counts");
  if (a.empty()) return 0.0;
  if (a.size() > 64) throw DomainError("exact point-set EMD is limited to 64 points");
  Eigen::MatrixXd c(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c(i, j) = (a[i] - b[j]).norm();
  return assignment_cost(c) / static_cast<double>(a.size());
}

/// Orientation in [0, pi) of the total least squares line through a point
/// set.
inline double line_orientation(const std::vector<Vec2>& pts) {
  Vec2 mean{0, 0};
  for (const auto& q : pts) mean = mean + (1.0 / pts.size()) * q;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& q : pts) {
    const Vec2 d = q - mean;
    sxx += d.x * d.x;
    sxy += d.x * d.y;
    syy += d.y * d.y;
  }
  const double theta = 0.5 * std::atan2(2 * sxy, sxx - syy);
  return theta < 0 ? theta + std::numbers::pi : theta;
}

/// Angle between two undirected lines given by orientations, in [0, pi/2].
inline double line_angle(double a, double b) {
  const double d = std::fmod(std::abs(a - b), std::numbers::pi);
  return std::min(d, std::numbers::pi - d);
}

struct TrajectoryReport {
  double bias = 0.0;   // |mean of (flow - reference flow)| in pixels
  double angle = 0.0;  // mean absolute line-fit angle difference, degrees
  double emd = 0.0;    // mean per-trajectory EMD, pixels
  int trajectories = 0;
  int angle_samples = 0;  // trajectories with a reference displacement >= 2 px
};

inline void to_json(nlohmann::json& j, const TrajectoryReport& r) {
  j = nlohmann::json{{"bias", r.bias}, {"angle", r.angle}, {"emd", r.emd}, {"trajectories", r.trajectories}, {"angle_samples", r.angle_samples}};
}

/// Metrics of trajectories against reference trajectories of equal lengths.
inline TrajectoryReport trajectory_metrics(const std::vector<std::vector<Vec2>>& traj, const std::vector<std::vector<Vec2>>& ref) {
  if (traj.size() != ref.size()) throw DomainError("trajectory and reference counts differ");
  if (traj.empty()) throw DomainError("no trajectories to evaluate");
  TrajectoryReport r;
  Vec2 drift{0, 0};
  long long vectors = 0;
  double angle = 0.0;
  double emd = 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const auto& a = traj[t];
    const auto& b = ref[t];
    if (a.size() != b.size()) throw DomainError("trajectory " + std::to_string(t) + " and its reference differ in length");
    for (std::size_t k = 1; k < a.size(); ++k) {
      drift = drift + ((a[k] - a[k - 1]) - (b[k] - b[k - 1]));
      ++vectors;
    }
    emd += point_set_emd(a, b);
    if (a.size() >= 2 && (b.back() - b.front()).norm() >= 2.0) {
      angle += line_angle(line_orientation(a), line_orientation(b)) * 180.0 / std::numbers::pi;
      ++r.angle_samples;
    }
  }
  r.trajectories = static_cast<int>(traj.size());
  r.bias = vectors > 0 ? ((1.0 / vectors) * drift).norm() : 0.0;
  r.angle = r.angle_samples > 0 ? angle / r.angle_samples : 0.0;
  r.emd = emd / traj.size();
  return r;
}

struct ZoomConsistency {
  TrajectoryReport report;
  int tracked = 0;
  int failed = 0;
};

inline void to_json(nlohmann::json& j, const ZoomConsistency& z) {
  j = nlohmann::json{{"metrics", z.report}, {"tracked", z.tracked}, {"failed", z.failed},
                     {"flow", "pyramidal Lucas-Kanade (classical)"}};
}

/// Flow trajectories of a zoom sequence scored against the exact radial
/// motion; failed trajectories are excluded and counted.
inline ZoomConsistency evaluate_zoom(const ZoomSequence& seq, const FlowConfig& cfg = {}) {
  const auto tracks = flow_trajectories(seq, cfg);
  std::vector<Trajectory> ok;
  ZoomConsistency out;
  for (const auto& t : tracks) (t.failed ? out.failed : out.tracked) += 1;
  for (const auto& t : tracks)
    if (!t.failed) ok.push_back(t);
  if (ok.empty()) throw DomainError("every trajectory failed; the sequence has no trackable texture");
  std::vector<std::vector<Vec2>> pts;
  for (const auto& t : ok) pts.push_back(t.points);
  out.report = trajectory_metrics(pts, reference_trajectories(seq, ok));
  return out;
}

// ---------------------------------------------------------------------------
// PSNR between scales

struct PsnrPair {
  double coarse = 0.0;
  double fine = 0.0;
  std::optional<double> psnr;  // empty when a slice exceeded the budget
};

struct PsnrInterReport {
  double mean = 0.0;  // over computed pairs
  std::vector<PsnrPair> pairs;
  int computed = 0;
};

inline void to_json(nlohmann::json& j, const PsnrInterReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"coarse", p.coarse}, {"fine", p.fine}, {"psnr", p.psnr ? nlohmann::json(*p.psnr) : nlohmann::json(nullptr)}});
  j = nlohmann::json{{"mean", r.mean}, {"computed", r.computed}, {"pairs", pairs}};
}

/// Mean PSNR over all pairs of slices; each finer slice is downsampled to the
/// coarser one's size with the scale-space kernel. `render` returns nullopt
/// for slices it cannot produce within budget.
inline PsnrInterReport psnr_inter(const std::function<std::optional<Image>(double)>& render, std::vector<double> scales,
                                  const DownsampleKernel& kernel, double samples_per_cycle) {
  std::sort(scales.begin(), scales.end());
  scales.erase(std::unique(scales.begin(), scales.end()), scales.end());
  if (scales.size() < 2) throw DomainError("psnr_inter needs at least two distinct scales");
  std::vector<std::optional<Image>> slices;
  for (double s : scales) slices.push_back(render(s));
  PsnrInterReport r;
  double sum = 0.0;
  for (std::size_t i = 0; i < scales.size(); ++i)
    for (std::size_t j = i + 1; j < scales.size(); ++j) {
      PsnrPair pair{scales[i], scales[j], std::nullopt};
      if (slices[i] && slices[j]) {
        const Image& coarse = *slices[i];
        const Image& fine = *slices[j];
        const double factor = static_cast<double>(fine.width) / coarse.width;
        const Image down = downsample_by(fine, factor, coarse.width, coarse.height, kernel, samples_per_cycle);
        pair.psnr = psnr(down, coarse);
        sum += *pair.psnr;
        ++r.computed;
      }
      r.pairs.push_back(pair);
    }
  r.mean = r.computed > 0 ? sum / r.computed : 0.0;
  return r;
}

inline Image oracle_slice(const ProceduralOracle& oracle, double s, const Region& region) {
  const auto w = lattice_window(oracle.config().cfg, s, region);
  std::vector<double> xs(w.nx);
  std::vector<double> ys(w.ny);
  const Vec2 o = w.origin();
  for (long long i = 0; i < w.nx; ++i) xs[i] = o.x + i * w.pitch;
  for (long long j = 0; j < w.ny; ++j) ys[j] = o.y + j * w.pitch;
  return oracle.sample_lattice(xs, ys, s);
}

template <typename S>
PsnrInterReport psnr_inter(const Generator<S>& g, const std::vector<double>& z, const std::vector<double>& scales,
                           const Region& region = {}, const DownsampleKernel& kernel = {},
                           long long pixel_budget = kDefaultPixelBudget) {
  const auto& cfg = g.config().cfg;
  return psnr_inter(
      [&](double s) -> std::optional<Image> {
        const auto w = lattice_window(cfg, s, region);
        if (w.nx * w.ny > pixel_budget) return std::nullopt;
        return generate_slice(g, z, s, region, pixel_budget);
      },
      scales, kernel, cfg.patch_resolution / cfg.f_min);
}

inline PsnrInterReport psnr_inter(const ProceduralOracle& oracle, const std::vector<double>& scales, const Region& region = {},
                                  long long pixel_budget = kDefaultPixelBudget) {
  const auto& cfg = oracle.config().cfg;
  return psnr_inter(
      [&](double s) -> std::optional<Image> {
        const auto w = lattice_window(cfg, s, region);
        if (w.nx * w.ny > pixel_budget) return std::nullopt;
        return oracle_slice(oracle, s, region);
      },
      scales, oracle.config().matching_kernel(), cfg.patch_resolution / cfg.f_min);
}

// ---------------------------------------------------------------------------
// PSNR against ground truth after global alignment

struct Similarity {
  double tx = 0.0;     // pixels
  double ty = 0.0;
  double scale = 1.0;  // isotropic, about the image center
};

/// out(x) = img(c + scale * (x - c) + t), bicubic.
inline Image warp_similarity(const Image& img, const Similarity& t) {
  Image out(img.width, img.height);
  const double cx = img.width / 2.0;
  const double cy = img.height / 2.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double sx = cx + t.scale * (x + 0.5 - cx) + t.tx;
      const double sy = cy + t.scale * (y + 0.5 - cy) + t.ty;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = sample_bicubic(img, sx, sy, c);
    }
  return out;
}

struct AlignmentResult {
  Similarity transform;
  double psnr = 0.0;           // at the best transform
  double identity_psnr = 0.0;  // without alignment
  bool improved = false;       // false: the search found nothing better than identity
};

inline void to_json(nlohmann::json& j, const AlignmentResult& a) {
  j = nlohmann::json{{"psnr", a.psnr},
                     {"identity_psnr", a.identity_psnr},
                     {"improved", a.improved},
                     {"transform", {{"tx", a.transform.tx}, {"ty", a.transform.ty}, {"scale", a.transform.scale}}}};
}

struct AlignmentSearch {
  double max_shift = 0.05;  // fraction of the extent
  double max_scale = 0.10;  // relative
  int grid = 9;             // per parameter
  int refine_rounds = 3;
};

/// Translation and isotropic scale of `img` maximizing PSNR against `ref`,
/// found by a grid search followed by coordinate-wise golden-section
/// refinement. PSNR is measured on the central 80% of the frame, which every
/// candidate transform maps inside the source.
inline AlignmentResult psnr_gt_aligned(const Image& img, const Image& ref, const AlignmentSearch& search = {}) {
  if (img.width != ref.width || img.height != ref.height) throw DomainError("alignment needs equally sized images");
  const int bx = img.width / 10;
  const int by = img.height / 10;
  const Image ref_c = ref.crop(bx, by, img.width - 2 * bx, img.height - 2 * by);
  auto score = [&](const Similarity& t) {
    const Image w = warp_similarity(img, t);
    return psnr(w.crop(bx, by, img.width - 2 * bx, img.height - 2 * by), ref_c);
  };
  AlignmentResult r;
  r.identity_psnr = score({});
  const double sx = search.max_shift * img.width;
  const double sy = search.max_shift * img.height;
  Similarity best;
  double best_v = r.identity_psnr;
  const int g = std::max(2, search.grid);
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b)
      for (int c = 0; c < g; ++c) {
        const Similarity t{-sx + 2 * sx * a / (g - 1), -sy + 2 * sy * b / (g - 1),
                           1 - search.max_scale + 2 * search.max_scale * c / (g - 1)};
        const double v = score(t);
        if (v > best_v) best_v = v, best = t;
      }
  // Golden-section refinement within one grid cell of the best point.
  const double cell[3] = {2 * sx / (g - 1), 2 * sy / (g - 1), 2 * search.max_scale / (g - 1)};
  auto param = [](Similarity& t, int k) -> double& { return k == 0 ? t.tx : (k == 1 ? t.ty : t.scale); };
  const double phi = (std::sqrt(5.0) - 1) / 2;
  for (int round = 0; round < search.refine_rounds; ++round)
    for (int k = 0; k < 3; ++k) {
      const double scale = cell[k] / (round + 1);
      double lo = param(best, k) - scale;
      double hi = param(best, k) + scale;
      Similarity t = best;
      auto f = [&](double x) {
        param(t, k) = x;
        return score(t);
      };
      double x1 = hi - phi * (hi - lo);
      double x2 = lo + phi * (hi - lo);
      double f1 = f(x1);
      double f2 = f(x2);
      for (int it = 0; it < 20; ++it) {
        if (f1 > f2) {
          hi = x2, x2 = x1, f2 = f1;
          x1 = hi - phi * (hi - lo), f1 = f(x1);
        } else {
          lo = x1, x1 = x2, f1 = f2;
          x2 = lo + phi * (hi - lo), f2 = f(x2);
        }
      }
      const double x = 0.5 * (lo + hi);
      const double v = f(x);
      if (v > best_v) best_v = v, param(best, k) = x;
    }
  r.improved = best_v > r.identity_psnr;
  r.transform = r.improved ? best : Similarity{};
  r.psnr = r.improved ? best_v : r.identity_psnr;
  return r;
}

/// Generated slice at scale s over `region` aligned against a reference
/// rendering of the same region.
template <typename S>
AlignmentResult psnr_gt_aligned(const Generator<S>& g, const std::vector<double>& z, const Image& reference, double s,
                                const Region& region, const AlignmentSearch& search = {}) {
  const Image slice = generate_slice(g, z, s, region);
  if (slice.width != reference.width || slice.height != reference.height)
    throw DomainError("reference does not match the slice size at this scale");
  return psnr_gt_aligned(slice, reference, search);
}

// ---------------------------------------------------------------------------
// Per-scale distribution score

using FeatureExtractor = std::function<Eigen::VectorXd(const Image&)>;

/// Hand-made statistics at three resolutions (channel moments, gradient
/// magnitudes and orientations, a 4x4 thumbnail), mapped through a fixed
/// random projection. Not comparable with learned-feature FID values.
class StatisticsFeatures {
 public:
  static constexpr int kRawDim = 3 * 20 + 48;

  explicit StatisticsFeatures(int dim = 64, std::uint64_t seed = 0x5eed) : proj_(dim, kRawDim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(double(kRawDim)));
    for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = n(rng);
  }

  static Eigen::VectorXd raw(const Image& img) {
    Eigen::VectorXd f(kRawDim);
    int k = 0;
    Image level = img;
    for (int l = 0; l < 3; ++l) {
      const double count = static_cast<double>(level.width) * level.height;
      for (int c = 0; c < 3; ++c) {
        double m = 0, m2 = 0;
        for (int y = 0; y < level.height; ++y)
          for (int x = 0; x < level.width; ++x) {
            const double v = level.at(x, y, c);
            m += v;
            m2 += v * v;
          }
        m /= count;
        f[k++] = m;
        f[k++] = std::sqrt(std::max(0.0, m2 / count - m * m));
      }
      const GrayImage g = luma(level);
      double ax = 0, ay = 0, mag = 0, mag2 = 0;
      double hist[6] = {};
      double orient[4] = {};
      int samples = 0;
      for (int y = 0; y + 1 < g.height; ++y)
        for (int x = 0; x + 1 < g.width; ++x) {
          const double gx = g.at(x + 1, y) - g.at(x, y);
          const double gy = g.at(x, y + 1) - g.at(x, y);
          const double m = std::hypot(gx, gy);
          ax += std::abs(gx);
          ay += std::abs(gy);
          mag += m;
          mag2 += m * m;
          const double edges[5] = {0.005, 0.01, 0.02, 0.04, 0.08};
          hist[std::upper_bound(edges, edges + 5, m) - edges] += 1;
          const double d = (gx + gy) / std::numbers::sqrt2;
          const double e = (gx - gy) / std::numbers::sqrt2;
          orient[0] += gx * gx;
          orient[1] += gy * gy;
          orient[2] += d * d;
          orient[3] += e * e;
          ++samples;
        }
      const double ns = std::max(1, samples);
      // Gradient statistics are an order of magnitude smaller than colors.
      const double w = 10.0;
      f[k++] = w * ax / ns;
      f[k++] = w * ay / ns;
      f[k++] = w * mag / ns;
      f[k++] = w * std::sqrt(std::max(0.0, mag2 / ns - (mag / ns) * (mag / ns)));
      for (double h : hist) f[k++] = h / ns;
      const double total = orient[0] + orient[1] + 1e-12;
      for (double o : orient) f[k++] = o / total;
      level = box_half(level);
    }
    const Image thumb = area_resample(img, 0, 0, img.width / 4.0, 4, 4);
    for (float v : thumb.data) f[k++] = v;
    return f;
  }

  Eigen::VectorXd operator()(const Image& img) const { return proj_ * raw(img); }

 private:
  Eigen::MatrixXd proj_;
};

/// Frechet distance between Gaussians fit to the rows of a and b.
inline double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols() || a.rows() < 1 || b.rows() < 1) throw DomainError("feature sets must be nonempty and equal in width");
  const Eigen::VectorXd ma = a.colwise().mean();
  const Eigen::VectorXd mb = b.colwise().mean();
  auto cov = [](const Eigen::MatrixXd& x, const Eigen::VectorXd& m) {
    const Eigen::MatrixXd c = x.rowwise() - m.transpose();
    return Eigen::MatrixXd((c.transpose() * c) / std::max<Eigen::Index>(1, x.rows() - 1));
  };
  const Eigen::MatrixXd ca = cov(a, ma);
  const Eigen::MatrixXd cb = cov(b, mb);
  // tr sqrt(ca cb) = tr sqrt(ca^1/2 cb ca^1/2), all symmetric.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(ca);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sa = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(sa * cb * sa);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::max(0.0, (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2 * tr_sqrt);
}

struct BinScore {
  int bin = 0;
  std::optional<double> score;
  int real_count = 0;
  int fake_count = 0;
};

inline void to_json(nlohmann::json& j, const BinScore& b) {
  j = nlohmann::json{{"bin", b.bin}, {"real_count", b.real_count}, {"fake_count", b.fake_count}};
  j["score"] = b.score ? nlohmann::json(*b.score) : nlohmann::json(nullptr);
}

struct DistributionScoreConfig {
  int samples_per_bin = 256;
  int min_samples = 200;
  std::uint64_t seed = 17;
  ModelMode mode = ModelMode::kGenerative;  // reconstruction: every fake uses latent 0
};

/// Per scale bin: Frechet distance between features of real patches and of
/// generated patches at scales uniform in the bin. Bins with fewer than
/// min_samples real patches are skipped with a warning. Fake specs and
/// latents depend only on the seed, so checkpoints are scored on identical
/// draws.
template <typename S>
std::vector<BinScore> per_scale_distribution_score(const Generator<S>& g, const DatasetManifest& manifest,
                                                   const DistributionScoreConfig& cfg = {},
                                                   const FeatureExtractor& features = StatisticsFeatures(),
                                                   std::ostream* warnings = &std::cerr) {
  const auto& scfg = manifest.cfg;
  std::vector<std::vector<const Image*>> by_bin(scfg.bin_count());
  for (const auto& r : manifest.records) by_bin[manifest.bin_of(r.scale_label)].push_back(&r.image);
  std::vector<BinScore> out;
  for (int b = 0; b < scfg.bin_count(); ++b) {
    BinScore bs;
    bs.bin = b;
    std::mt19937_64 rng(cfg.seed + 7919 * b);
    auto& reals = by_bin[b];
    std::shuffle(reals.begin(), reals.end(), rng);
    bs.real_count = static_cast<int>(std::min<std::size_t>(reals.size(), cfg.samples_per_bin));
    if (bs.real_count < cfg.min_samples) {
      if (warnings)
        *warnings << "warning: scale bin " << b << " has " << reals.size() << " real patches (< " << cfg.min_samples
                  << "); skipped\n";
      out.push_back(bs);
      continue;
    }
    bs.fake_count = cfg.samples_per_bin;
    Eigen::MatrixXd fr(bs.real_count, 0);
    Eigen::MatrixXd ff(bs.fake_count, 0);
    for (int i = 0; i < bs.real_count; ++i) {
      const Eigen::VectorXd v = features(*reals[i]);
      if (fr.cols() == 0) fr.resize(bs.real_count, v.size());
      fr.row(i) = v.transpose();
    }
    const int dim = g.config().latent_dim;
    for (int i = 0; i < bs.fake_count; ++i) {
      const double s = sample_scale_in_bin(b, scfg.s_max, rng);
      const Vec2 c = sample_inside_center(s, rng);
      const auto z = cfg.mode == ModelMode::kReconstruction ? latent_from_seed(0, dim) : latent_from_seed(rng(), dim);
      const Eigen::VectorXd v = features(generate_patch(g, z, {c, s}));
      if (ff.cols() == 0) ff.resize(bs.fake_count, v.size());
      ff.row(i) = v.transpose();
    }
    bs.score = frechet_distance(fr, ff);
    out.push_back(bs);
  }
  return out;
}

}  // namespace scalespace
