#pragma once

// Image resampling: scale-space downsampling kernels, bicubic lookup and
// area (box) filtering.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scalespace/image.hpp"

namespace scalespace {

/// Low-pass kernel used when moving an image down the scale axis.
///
/// kGaussian realises the scale space of the procedural oracle: a slice at
/// bandwidth B carries a Gaussian blur of std kappa / B, so going from
/// bandwidth B to B / k needs an extra blur of (kappa / B) * sqrt(k^2 - 1).
/// kWindowedSinc is a Lanczos low-pass at the coarse Nyquist rate.
struct DownsampleKernel {
  enum class Type { kGaussian, kWindowedSinc };
  Type type = Type::kGaussian;
  double kappa = 0.4;     // gaussian blur per unit of 1/bandwidth
  int sinc_lobes = 3;     // windowed-sinc support in coarse pixels

  friend bool operator==(const DownsampleKernel&, const DownsampleKernel&) = default;
};

inline void to_json(nlohmann::json& j, const DownsampleKernel& k) {
  j = nlohmann::json{{"type", k.type == DownsampleKernel::Type::kGaussian ? "gaussian" : "windowed_sinc"},
                     {"kappa", k.kappa},
                     {"sinc_lobes", k.sinc_lobes}};
}

inline void from_json(const nlohmann::json& j, DownsampleKernel& k) {
  const auto type = j.at("type").get<std::string>();
  if (type == "gaussian") k.type = DownsampleKernel::Type::kGaussian;
  else if (type == "windowed_sinc") k.type = DownsampleKernel::Type::kWindowedSinc;
  else throw ConfigError("unknown downsample kernel '" + type + "'");
  k.kappa = j.value("kappa", 0.4);
  k.sinc_lobes = j.value("sinc_lobes", 3);
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

/// One-dimensional filter taps evaluated at a continuous offset (fine px).
class KernelProfile {
 public:
  /// factor: fine pixels per coarse pixel (> 0). samples_per_cycle: fine
  /// pixels per cycle of the fine bandwidth (2*sqrt(2) for Nyquist-sampled
  /// slices).
  KernelProfile(const DownsampleKernel& k, double factor, double samples_per_cycle) : type_(k.type) {
    if (k.type == DownsampleKernel::Type::kGaussian) {
      sigma_ = k.kappa * samples_per_cycle * std::sqrt(std::max(0.0, factor * factor - 1.0));
      radius_ = 3.0 * sigma_;
    } else {
      cutoff_ = 0.5 / std::max(1.0, factor);
      lobes_ = k.sinc_lobes;
      radius_ = lobes_ / (2.0 * cutoff_);
    }
  }

  double radius() const { return radius_; }
  bool identity() const { return radius_ < 1e-9; }

  double operator()(double u) const {
    if (std::abs(u) > radius_) return 0.0;
    if (type_ == DownsampleKernel::Type::kGaussian) return std::exp(-0.5 * u * u / (sigma_ * sigma_));
    const double t = 2.0 * cutoff_ * u;
    return sinc(t) * sinc(t / lobes_);
  }

 private:
  DownsampleKernel::Type type_;
  double sigma_ = 0.0;
  double cutoff_ = 0.5;
  int lobes_ = 3;
  double radius_ = 0.0;
};

/// Row i holds the weights of the fine samples (pixel k centered at k + 0.5)
/// contributing to an output sample centered at first + i * step. Weights
/// are renormalised over the taps that fall inside [0, n).
inline Eigen::MatrixXd axis_weight_matrix(double first, double step, int out_n, int n,
                                          const KernelProfile& kernel) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out_n, n);
  for (int i = 0; i < out_n; ++i) {
    const double center = first + i * step;
    if (kernel.identity()) {
      const double u = center - 0.5;
      const int i0 = static_cast<int>(std::floor(u));
      const double t = u - i0;
      w(i, std::clamp(i0, 0, n - 1)) += 1.0 - t;
      w(i, std::clamp(i0 + 1, 0, n - 1)) += t;
      continue;
    }
    const double r = kernel.radius();
    const int lo = std::max(0, static_cast<int>(std::ceil(center - 0.5 - r)));
    const int hi = std::min(n - 1, static_cast<int>(std::floor(center - 0.5 + r)));
    double sum = 0.0;
    for (int k = lo; k <= hi; ++k) {
      w(i, k) = kernel(k + 0.5 - center);
      sum += w(i, k);
    }
    if (std::abs(sum) < 1e-12) {
      w.row(i).setZero();
      w(i, std::clamp(static_cast<int>(std::floor(center)), 0, n - 1)) = 1.0;
    } else {
      w.row(i) /= sum;
    }
  }
  return w;
}

/// Separable linear resampler out_c = Wy * in_c * Wx^T; also provides the
/// adjoint for backpropagation.
struct SeparableResampler {
  Eigen::MatrixXd wx;  // out_w x in_w
  Eigen::MatrixXd wy;  // out_h x in_h

  int out_width() const { return static_cast<int>(wx.rows()); }
  int out_height() const { return static_cast<int>(wy.rows()); }

  Image apply(const Image& in) const {
    Image out(out_width(), out_height());
    Eigen::MatrixXd plane(in.height, in.width);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) plane(y, x) = in.at(x, y, c);
      const Eigen::MatrixXd r = wy * plane * wx.transpose();
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(x, y, c) = static_cast<float>(r(y, x));
    }
    return out;
  }

  /// Adjoint: maps an output-space gradient back to input space.
  Image adjoint(const Image& grad_out) const {
    Image g(static_cast<int>(wx.cols()), static_cast<int>(wy.cols()));
    Eigen::MatrixXd plane(grad_out.height, grad_out.width);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < grad_out.height; ++y)
        for (int x = 0; x < grad_out.width; ++x) plane(y, x) = grad_out.at(x, y, c);
      const Eigen::MatrixXd r = wy.transpose() * plane * wx;
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) g.at(x, y, c) = static_cast<float>(r(y, x));
    }
    return g;
  }
};

/// Output pixel (i, j) is centered at fine continuous coordinates
/// (x0 + i * step, y0 + j * step).
inline SeparableResampler make_lattice_resampler(int in_w, int in_h, double x0, double y0, double step,
                                                 int out_w, int out_h, const KernelProfile& kernel) {
  return {axis_weight_matrix(x0, step, out_w, in_w, kernel), axis_weight_matrix(y0, step, out_h, in_h, kernel)};
}

inline Image resample_lattice(const Image& fine, double x0, double y0, double step, int out_w, int out_h,
                              const KernelProfile& kernel) {
  return make_lattice_resampler(fine.width, fine.height, x0, y0, step, out_w, out_h, kernel).apply(fine);
}

/// Downsamples a whole image by an integer-or-fractional factor so that
/// output pixel centers coincide with the coarse lattice covering the same
/// extent.
inline Image downsample_by(const Image& fine, double factor, int out_w, int out_h, const DownsampleKernel& k,
                           double samples_per_cycle) {
  KernelProfile kernel(k, factor, samples_per_cycle);
  const double step_x = static_cast<double>(fine.width) / out_w;
  const double step_y = static_cast<double>(fine.height) / out_h;
  if (std::abs(step_x - step_y) > 1e-9) throw DomainError("anisotropic downsampling is not supported");
  return resample_lattice(fine, 0.5 * step_x, 0.5 * step_y, step_x, out_w, out_h, kernel);
}

/// Catmull-Rom bicubic lookup at continuous coordinates (pixel k centered at
/// k + 0.5), clamped at the border.
inline float sample_bicubic(const Image& img, double x, double y, int c) {
  const double u = x - 0.5;
  const double v = y - 0.5;
  const int ix = static_cast<int>(std::floor(u));
  const int iy = static_cast<int>(std::floor(v));
  const double tx = u - ix;
  const double ty = v - iy;
  auto weights = [](double t, double w[4]) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    w[0] = -0.5 * t3 + t2 - 0.5 * t;
    w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
    w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
    w[3] = 0.5 * t3 - 0.5 * t2;
  };
  double wx[4];
  double wy[4];
  weights(tx, wx);
  weights(ty, wy);
  double acc = 0.0;
  for (int j = 0; j < 4; ++j) {
    const int yy = std::clamp(iy - 1 + j, 0, img.height - 1);
    double row = 0.0;
    for (int i = 0; i < 4; ++i) {
      const int xx = std::clamp(ix - 1 + i, 0, img.width - 1);
      row += wx[i] * img.at(xx, yy, c);
    }
    acc += wy[j] * row;
  }
  return static_cast<float>(acc);
}

/// 2x box reduction (one mip level). Odd trailing rows/columns are averaged
/// with replicated edges.
inline Image box_half(const Image& img) {
  const int w = std::max(1, (img.width + 1) / 2);
  const int h = std::max(1, (img.height + 1) / 2);
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const int x0 = std::min(2 * x, img.width - 1);
        const int x1 = std::min(2 * x + 1, img.width - 1);
        const int y0 = std::min(2 * y, img.height - 1);
        const int y1 = std::min(2 * y + 1, img.height - 1);
        out.at(x, y, c) = 0.25f * (img.at(x0, y0, c) + img.at(x1, y0, c) + img.at(x0, y1, c) + img.at(x1, y1, c));
      }
  return out;
}

/// Exact area-weighted resampling: output pixel (i, j) is the average of the
/// source over the square [x0 + i*step, x0 + (i+1)*step) x [...], expressed in
/// source pixel units (pixel k spans [k, k+1)).
inline Image area_resample(const Image& src, double x0, double y0, double step, int out_w, int out_h) {
  auto coverage = [](double a, double b, int n, int& first, std::vector<double>& w) {
    first = std::max(0, static_cast<int>(std::floor(a)));
    const int last = std::min(n - 1, static_cast<int>(std::ceil(b)) - 1);
    w.clear();
    double sum = 0.0;
    for (int k = first; k <= last; ++k) {
      const double ov = std::min<double>(b, k + 1) - std::max<double>(a, k);
      w.push_back(std::max(0.0, ov));
      sum += w.back();
    }
    if (sum <= 0.0) {
      first = std::clamp(static_cast<int>(std::floor(a)), 0, n - 1);
      w.assign(1, 1.0);
      return;
    }
    for (double& v : w) v /= sum;
  };
  Image tmp(out_w, src.height);
  std::vector<double> w;
  for (int i = 0; i < out_w; ++i) {
    int first = 0;
    coverage(x0 + i * step, x0 + (i + 1) * step, src.width, first, w);
    for (int y = 0; y < src.height; ++y)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * src.at(first + static_cast<int>(k), y, c);
        tmp.at(i, y, c) = static_cast<float>(acc);
      }
  }
  Image out(out_w, out_h);
  for (int j = 0; j < out_h; ++j) {
    int first = 0;
    coverage(y0 + j * step, y0 + (j + 1) * step, src.height, first, w);
    for (int i = 0; i < out_w; ++i)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * tmp.at(i, first + static_cast<int>(k), c);
        out.at(i, j, c) = static_cast<float>(acc);
      }
  }
  return out;
}

}  // namespace scalespace
