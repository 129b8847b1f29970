#pragma once

// Separable valid-mode filters on channel-major feature maps: a C x (n * n)
// matrix whose column y * n + x holds all channels of pixel (x, y).

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <vector>

#include "scalespace/core.hpp"
#include "scalespace/resample.hpp"

namespace scalespace::nn {

/// Output sample j reads taps[j % phases] from input start[j] onward.
struct AxisFilter {
  int n_in = 0;
  int n_out = 0;
  std::vector<int> start;
  std::vector<std::vector<double>> phases;
};

/// Windowed-sinc low-pass with cutoff in cycles per sample, 2 * radius + 1
/// taps, unit DC gain. Valid mode: n_out = n_in - 2 * radius.
inline AxisFilter lowpass_filter(int n_in, double cutoff, int radius) {
  AxisFilter f;
  f.n_in = n_in;
  f.n_out = n_in - 2 * radius;
  if (f.n_out < 1) throw DomainError("low-pass input too small");
  std::vector<double> h;
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    const double v = 2.0 * cutoff * sinc(2.0 * cutoff * t) * sinc(static_cast<double>(t) / (radius + 1));
    h.push_back(v);
    sum += v;
  }
  for (double& v : h) v /= sum;
  f.phases = {h};
  for (int j = 0; j < f.n_out; ++j) f.start.push_back(j);
  return f;
}

/// 2x interpolation with a Lanczos kernel of `taps` lobes. Input sample k
/// sits at k; output j at taps - 0.75 + j / 2. Valid mode:
/// n_out = 2 (n_in - 2 taps + 1).
inline AxisFilter upsample_filter(int n_in, int taps) {
  AxisFilter f;
  f.n_in = n_in;
  f.n_out = 2 * (n_in - 2 * taps + 1);
  if (f.n_out < 1) throw DomainError("upsampling input too small");
  for (int phase = 0; phase < 2; ++phase) {
    std::vector<double> h;
    double sum = 0.0;
    for (int t = 0; t < 2 * taps; ++t) {
      const double d = taps - 0.75 + 0.5 * phase - t;
      const double v = sinc(d) * sinc(d / taps);
      h.push_back(v);
      sum += v;
    }
    for (double& v : h) v /= sum;
    f.phases.push_back(h);
  }
  for (int j = 0; j < f.n_out; ++j) f.start.push_back(j / 2);
  return f;
}

/// Applies f along x then y to a square n_in x n_in map.
template <typename Mat>
Mat apply2d(const Mat& in, const AxisFilter& f) {
  using S = typename Mat::Scalar;
  const int ni = f.n_in;
  const int no = f.n_out;
  const int np = static_cast<int>(f.phases.size());
  Mat tmp = Mat::Zero(in.rows(), static_cast<Eigen::Index>(ni) * no);
  for (int y = 0; y < ni; ++y)
    for (int j = 0; j < no; ++j) {
      const auto& h = f.phases[j % np];
      auto dst = tmp.col(static_cast<Eigen::Index>(y) * no + j);
      for (std::size_t t = 0; t < h.size(); ++t)
        dst += static_cast<S>(h[t]) * in.col(static_cast<Eigen::Index>(y) * ni + f.start[j] + t);
    }
  Mat out = Mat::Zero(in.rows(), static_cast<Eigen::Index>(no) * no);
  for (int j = 0; j < no; ++j) {
    const auto& h = f.phases[j % np];
    for (std::size_t t = 0; t < h.size(); ++t) {
      const S w = static_cast<S>(h[t]);
      const Eigen::Index src = static_cast<Eigen::Index>(f.start[j] + t) * no;
      out.middleCols(static_cast<Eigen::Index>(j) * no, no) += w * tmp.middleCols(src, no);
    }
  }
  return out;
}

/// Adjoint of apply2d.
template <typename Mat>
Mat apply2d_adjoint(const Mat& g, const AxisFilter& f) {
  using S = typename Mat::Scalar;
  const int ni = f.n_in;
  const int no = f.n_out;
  const int np = static_cast<int>(f.phases.size());
  Mat tmp = Mat::Zero(g.rows(), static_cast<Eigen::Index>(ni) * no);
  for (int j = 0; j < no; ++j) {
    const auto& h = f.phases[j % np];
    for (std::size_t t = 0; t < h.size(); ++t) {
      const Eigen::Index dst = static_cast<Eigen::Index>(f.start[j] + t) * no;
      tmp.middleCols(dst, no) += static_cast<S>(h[t]) * g.middleCols(static_cast<Eigen::Index>(j) * no, no);
    }
  }
  Mat out = Mat::Zero(g.rows(), static_cast<Eigen::Index>(ni) * ni);
  for (int y = 0; y < ni; ++y)
    for (int j = 0; j < no; ++j) {
      const auto& h = f.phases[j % np];
      const auto src = tmp.col(static_cast<Eigen::Index>(y) * no + j);
      for (std::size_t t = 0; t < h.size(); ++t)
        out.col(static_cast<Eigen::Index>(y) * ni + f.start[j] + t) += static_cast<S>(h[t]) * src;
    }
  return out;
}

/// Removes c pixels on every side of an n x n map.
template <typename Mat>
Mat crop2d(const Mat& in, int n, int c) {
  if (c == 0) return in;
  const int m = n - 2 * c;
  Mat out(in.rows(), static_cast<Eigen::Index>(m) * m);
  for (int y = 0; y < m; ++y)
    out.middleCols(static_cast<Eigen::Index>(y) * m, m) = in.middleCols(static_cast<Eigen::Index>(y + c) * n + c, m);
  return out;
}

template <typename Mat>
Mat pad2d(const Mat& in, int n, int c) {
  if (c == 0) return in;
  const int m = n - 2 * c;
  Mat out = Mat::Zero(in.rows(), static_cast<Eigen::Index>(n) * n);
  for (int y = 0; y < m; ++y)
    out.middleCols(static_cast<Eigen::Index>(y + c) * n + c, m) = in.middleCols(static_cast<Eigen::Index>(y) * m, m);
  return out;
}

}  // namespace scalespace::nn
