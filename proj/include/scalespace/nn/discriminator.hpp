#pragma once

// Patch discriminator: 1x1 fromRGB, then blocks of 3x3 conv + leaky ReLU +
// 2x2 average pooling down to 4x4, then two dense layers. Optionally a
// projection term <embed[bin], h> conditions the score on the scale bin.
// Backpropagates to parameters and to the input image.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "scalespace/core.hpp"

namespace scalespace {

struct DiscriminatorConfig {
  int patch_resolution = 32;
  int base_channels = 16;
  int max_channels = 64;
  int fc_dim = 64;
  int scale_bins = 0;  // > 0 enables the scale-bin projection

  int block_count() const { return static_cast<int>(std::lround(std::log2(patch_resolution / 4.0))); }
  int channels(int level) const { return std::min(max_channels, base_channels << level); }

  void validate() const {
    if (patch_resolution < 8 || (patch_resolution & (patch_resolution - 1)) != 0)
      throw ConfigError("discriminator needs a power-of-two patch resolution >= 8");
    if (base_channels < 1 || max_channels < base_channels || fc_dim < 1 || scale_bins < 0)
      throw ConfigError("discriminator dimensions must be positive");
  }
};

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& d) {
  j = nlohmann::json{{"base_channels", d.base_channels},
                     {"max_channels", d.max_channels},
                     {"fc_dim", d.fc_dim},
                     {"scale_bins", d.scale_bins}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& d) {
  d.base_channels = j.value("base_channels", d.base_channels);
  d.max_channels = j.value("max_channels", d.max_channels);
  d.fc_dim = j.value("fc_dim", d.fc_dim);
  d.scale_bins = j.value("scale_bins", d.scale_bins);
}

namespace nn {

/// 3x3 zero-padded patches: row (ky * 3 + kx) * C + c, column y * n + x.
template <typename Mat>
Mat im2col3(const Mat& a, int n) {
  const auto C = a.rows();
  Mat cols = Mat::Zero(9 * C, static_cast<Eigen::Index>(n) * n);
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) {
      const int x_lo = std::max(0, 1 - kx);
      const int x_hi = std::min(n, n + 1 - kx);
      for (int y = 0; y < n; ++y) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= n) continue;
        cols.block((ky * 3 + kx) * C, static_cast<Eigen::Index>(y) * n + x_lo, C, x_hi - x_lo) =
            a.block(0, static_cast<Eigen::Index>(sy) * n + x_lo + kx - 1, C, x_hi - x_lo);
      }
    }
  return cols;
}

template <typename Mat>
Mat col2im3(const Mat& cols, int n, Eigen::Index C) {
  Mat a = Mat::Zero(C, static_cast<Eigen::Index>(n) * n);
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) {
      const int x_lo = std::max(0, 1 - kx);
      const int x_hi = std::min(n, n + 1 - kx);
      for (int y = 0; y < n; ++y) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= n) continue;
        a.block(0, static_cast<Eigen::Index>(sy) * n + x_lo + kx - 1, C, x_hi - x_lo) +=
            cols.block((ky * 3 + kx) * C, static_cast<Eigen::Index>(y) * n + x_lo, C, x_hi - x_lo);
      }
    }
  return a;
}

template <typename Mat>
Mat avgpool2(const Mat& a, int n) {
  using S = typename Mat::Scalar;
  const int m = n / 2;
  Mat out(a.rows(), static_cast<Eigen::Index>(m) * m);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x) {
      const Eigen::Index i = static_cast<Eigen::Index>(2 * y) * n + 2 * x;
      out.col(static_cast<Eigen::Index>(y) * m + x) = S(0.25) * (a.col(i) + a.col(i + 1) + a.col(i + n) + a.col(i + n + 1));
    }
  return out;
}

template <typename Mat>
Mat avgpool2_adjoint(const Mat& g, int n) {
  using S = typename Mat::Scalar;
  const int m = n / 2;
  Mat out(g.rows(), static_cast<Eigen::Index>(n) * n);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x) {
      const Eigen::Index i = static_cast<Eigen::Index>(2 * y) * n + 2 * x;
      const auto v = (S(0.25) * g.col(static_cast<Eigen::Index>(y) * m + x)).eval();
      out.col(i) = v;
      out.col(i + 1) = v;
      out.col(i + n) = v;
      out.col(i + n + 1) = v;
    }
  return out;
}

/// Mirrors an n x n map left-right (its own adjoint).
template <typename Mat>
Mat flip_x(const Mat& a, int n) {
  Mat out(a.rows(), a.cols());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) out.col(static_cast<Eigen::Index>(y) * n + x) = a.col(static_cast<Eigen::Index>(y) * n + n - 1 - x);
  return out;
}

}  // namespace nn

template <typename S>
class Discriminator {
 public:
  using Scalar = S;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  struct Dense {
    std::size_t w = 0;
    std::size_t b = 0;
    int out = 0;
    int in = 0;
    double gain = 1.0;
  };

  /// Activations plus the leaky-ReLU slope of every unit (the activation
  /// pattern).
  struct Cache {
    Mat x;
    Mat rgb_slope;
    std::vector<Mat> cols;
    std::vector<Mat> slopes;
    Vec flat;
    Vec fc_slope;
    Vec h;
    int bin = -1;
  };

  Discriminator() = default;

  explicit Discriminator(DiscriminatorConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::size_t off = 0;
    auto dense = [&](int out, int in) {
      Dense d{off, off + static_cast<std::size_t>(out) * in, out, in, 1.0 / std::sqrt(double(in))};
      off = d.b + out;
      return d;
    };
    rgb_ = dense(cfg_.channels(0), 3);
    for (int b = 0; b < cfg_.block_count(); ++b) convs_.push_back(dense(cfg_.channels(b + 1), 9 * cfg_.channels(b)));
    fc1_ = dense(cfg_.fc_dim, cfg_.channels(cfg_.block_count()) * 16);
    fc2_ = dense(1, cfg_.fc_dim);
    if (cfg_.scale_bins > 0) {
      embed_ = off;
      off += static_cast<std::size_t>(cfg_.fc_dim) * cfg_.scale_bins;
    }
    params_.assign(off, S(0));
  }

  static Discriminator create(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    Discriminator d(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : d.params_) v = static_cast<S>(n(rng));
    for (const Dense* l : d.layers()) std::fill_n(d.params_.begin() + l->b, l->out, S(0));
    if (cfg.scale_bins > 0)
      for (std::size_t i = d.embed_; i < d.params_.size(); ++i) d.params_[i] *= S(1.0 / std::sqrt(double(cfg.fc_dim)));
    return d;
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }

  /// Score of a 3 x p^2 image in [-1, 1]; bin is used only when conditioned.
  /// With `pattern`, every unit keeps the slope it had in that earlier pass,
  /// which makes the network exactly linear in x.
  S forward(const Mat& x, int bin = -1, Cache* cache = nullptr, const Cache* pattern = nullptr) const {
    int n = cfg_.patch_resolution;
    if (x.rows() != 3 || x.cols() != static_cast<Eigen::Index>(n) * n) throw DomainError("discriminator input has the wrong shape");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.x = x;
    c.cols.clear();
    c.slopes.clear();
    Mat pre = apply(rgb_, x);
    c.rgb_slope = pattern ? pattern->rgb_slope : slopes_of(pre);
    Mat a = pre.cwiseProduct(c.rgb_slope);
    for (std::size_t b = 0; b < convs_.size(); ++b) {
      Mat cols = nn::im2col3(a, n);
      const Mat y = apply(convs_[b], cols);
      Mat slope = pattern ? pattern->slopes[b] : slopes_of(y);
      a = nn::avgpool2(y.cwiseProduct(slope).eval(), n);
      n /= 2;
      if (cache) c.cols.push_back(std::move(cols));
      c.slopes.push_back(std::move(slope));
    }
    c.flat = Eigen::Map<const Vec>(a.data(), a.size());
    const Vec fc_pre = apply(fc1_, c.flat);
    c.fc_slope = pattern ? pattern->fc_slope : slopes_of(fc_pre);
    c.h = fc_pre.cwiseProduct(c.fc_slope);
    c.bin = bin;
    S out = apply(fc2_, c.h)(0);
    if (cfg_.scale_bins > 0 && bin >= 0) out += embedding(bin).dot(c.h);
    return out;
  }

  /// d_out * dD/dparams accumulated into grad (if non-null); returns
  /// d_out * dD/dx.
  Mat backward(const Cache& c, S d_out, std::vector<S>* grad) const {
    Vec dh = weight(fc2_).transpose() * Vec::Constant(1, d_out);
    if (grad) {
      add_grad(fc2_, Vec::Constant(1, d_out) * c.h.transpose(), Vec::Constant(1, d_out), *grad);
      if (cfg_.scale_bins > 0 && c.bin >= 0)
        Eigen::Map<Vec>(grad->data() + embed_ + static_cast<std::size_t>(c.bin) * cfg_.fc_dim, cfg_.fc_dim) += d_out * c.h;
    }
    if (cfg_.scale_bins > 0 && c.bin >= 0) dh += d_out * embedding(c.bin);
    const Vec dfc = dh.cwiseProduct(c.fc_slope);
    if (grad) add_grad(fc1_, dfc * c.flat.transpose(), dfc, *grad);
    const Vec dflat = weight(fc1_).transpose() * dfc;
    int n = cfg_.patch_resolution >> convs_.size();
    Mat da = Eigen::Map<const Mat>(dflat.data(), cfg_.channels(cfg_.block_count()), static_cast<Eigen::Index>(n) * n);
    for (int b = static_cast<int>(convs_.size()) - 1; b >= 0; --b) {
      n *= 2;
      const Mat dy = nn::avgpool2_adjoint(da, n).cwiseProduct(c.slopes[b]);
      if (grad) add_grad(convs_[b], dy * c.cols[b].transpose(), dy.rowwise().sum(), *grad);
      da = nn::col2im3<Mat>(weight(convs_[b]).transpose() * dy, n, cfg_.channels(b));
    }
    const Mat dpre = da.cwiseProduct(c.rgb_slope);
    if (grad) add_grad(rgb_, dpre * c.x.transpose(), dpre.rowwise().sum(), *grad);
    return weight(rgb_).transpose() * dpre;
  }

 private:
  static S slope(S v) { return v > S(0) ? S(std::numbers::sqrt2) : S(0.2 * std::numbers::sqrt2); }
  template <typename M>
  static M slopes_of(const M& pre) {
    return pre.unaryExpr([](S v) { return slope(v); });
  }

  std::vector<const Dense*> layers() const {
    std::vector<const Dense*> out{&rgb_, &fc1_, &fc2_};
    for (const auto& c : convs_) out.push_back(&c);
    return out;
  }

  Mat weight(const Dense& d) const {
    return Eigen::Map<const Mat>(params_.data() + d.w, d.out, d.in) * static_cast<S>(d.gain);
  }
  Vec bias(const Dense& d) const { return Eigen::Map<const Vec>(params_.data() + d.b, d.out); }
  Vec embedding(int bin) const {
    if (bin >= cfg_.scale_bins) throw DomainError("scale bin outside the discriminator embedding");
    return Eigen::Map<const Vec>(params_.data() + embed_ + static_cast<std::size_t>(bin) * cfg_.fc_dim, cfg_.fc_dim);
  }
  template <typename M>
  M apply(const Dense& d, const M& x) const {
    M y = weight(d) * x;
    y.colwise() += bias(d);
    return y;
  }
  void add_grad(const Dense& d, const Mat& gw, const Vec& gb, std::vector<S>& grad) const {
    Eigen::Map<Mat>(grad.data() + d.w, d.out, d.in) += gw * static_cast<S>(d.gain);
    Eigen::Map<Vec>(grad.data() + d.b, d.out) += gb;
  }

  DiscriminatorConfig cfg_;
  Dense rgb_;
  std::vector<Dense> convs_;
  Dense fc1_;
  Dense fc2_;
  std::size_t embed_ = 0;
  std::vector<S> params_;
};

}  // namespace scalespace
