#pragma once

// Multiscale generator G(z, c_p, s_p). A mapping network turns z into a
// style vector; each synthesis layer concatenates its rasterized Fourier
// features to the incoming activations, applies a modulated and demodulated
// 1x1 convolution, a leaky ReLU and a windowed-sinc low-pass at the layer
// limit, and optionally a 2x sinc upsampling. All spatial ops run in valid
// mode on a grid extended by a margin, so a patch's pixels never see
// padding: patches whose centers differ by a multiple of p / r_0 output
// pixels agree exactly on their overlap.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "scalespace/core.hpp"
#include "scalespace/fourier.hpp"
#include "scalespace/image.hpp"
#include "scalespace/nn/filters.hpp"

namespace scalespace {

struct LayerSpec {
  int resolution = 0;
  int channels = 0;
  double limit = 0.0;  // cycles per patch
  bool injects = false;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"resolution", l.resolution}, {"channels", l.channels}, {"limit", l.limit}, {"injects", l.injects}};
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  l.resolution = j.at("resolution").get<int>();
  l.channels = j.at("channels").get<int>();
  l.limit = j.at("limit").get<double>();
  l.injects = j.at("injects").get<bool>();
}

struct GeneratorConfig {
  int latent_dim = 32;
  int style_dim = 64;
  int mapping_layers = 2;
  std::vector<LayerSpec> layers;
  BinningConfig binning;
  ScaleSpaceConfig cfg;
  int lowpass_radius = 2;
  int upsample_taps = 3;

  int patch_resolution() const { return cfg.patch_resolution; }

  std::vector<InjectionLayer> injection_layers() const {
    std::vector<InjectionLayer> out;
    for (std::size_t l = 0; l < layers.size(); ++l)
      if (layers[l].injects) out.push_back({static_cast<int>(l), layers[l].limit});
    return out;
  }

  void validate() const {
    cfg.validate();
    binning.validate();
    if (latent_dim < 1 || style_dim < 1 || mapping_layers < 1) throw ConfigError("generator dimensions must be positive");
    if (layers.empty()) throw ConfigError("generator layer plan is empty");
    if (!layers.front().injects) throw ConfigError("the first generator layer must inject Fourier features");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.resolution < 1 || L.channels < 1 || !(L.limit > 0.0))
        throw ConfigError("generator layer " + std::to_string(l) + " has a non-positive size or limit");
      if (L.limit > 0.5 * L.resolution)
        throw ConfigError("generator layer " + std::to_string(l) + " limit exceeds its Nyquist frequency");
      if (l == 0) continue;
      const int prev = layers[l - 1].resolution;
      if (L.resolution != prev && L.resolution != 2 * prev)
        throw ConfigError("generator resolutions must repeat or double between layers");
      if (L.injects && L.resolution == prev)
        throw ConfigError("generator layer " + std::to_string(l) + " injects without following an upsampling step");
    }
    if (layers.back().resolution != cfg.patch_resolution)
      throw ConfigError("final generator resolution must equal the patch resolution");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& g) {
  j = nlohmann::json{{"latent_dim", g.latent_dim},         {"style_dim", g.style_dim},
                     {"mapping_layers", g.mapping_layers}, {"layers", g.layers},
                     {"binning", g.binning},               {"config", g.cfg},
                     {"lowpass_radius", g.lowpass_radius}, {"upsample_taps", g.upsample_taps}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& g) {
  g.latent_dim = j.at("latent_dim").get<int>();
  g.style_dim = j.at("style_dim").get<int>();
  g.mapping_layers = j.at("mapping_layers").get<int>();
  g.layers = j.at("layers").get<std::vector<LayerSpec>>();
  g.binning = j.at("binning").get<BinningConfig>();
  g.cfg = j.at("config").get<ScaleSpaceConfig>();
  g.lowpass_radius = j.at("lowpass_radius").get<int>();
  g.upsample_taps = j.at("upsample_taps").get<int>();
}

/// Five-layer plan at resolutions p/4, p/4, p/2, p, p with limits at 3/8 of
/// each layer's sampling rate and injection at layers 0, 2, 3.
inline GeneratorConfig default_generator_config(const ScaleSpaceConfig& cfg, int features_per_bin = 48) {
  const int p = cfg.patch_resolution;
  if (p % 4 != 0) throw ConfigError("default generator plan needs a patch resolution divisible by 4");
  GeneratorConfig g;
  g.cfg = cfg;
  const int res[] = {p / 4, p / 4, p / 2, p, p};
  const int ch[] = {2 * p, 2 * p, 3 * p / 2, p, p};
  const bool inj[] = {true, false, true, true, false};
  for (int l = 0; l < 5; ++l) g.layers.push_back({res[l], ch[l], 0.375 * res[l], inj[l]});
  g.binning.s_base = std::log2(p / 4.0);
  g.binning.features_per_bin = features_per_bin;
  return g;
}

/// Standard-normal latent drawn deterministically from a seed.
inline std::vector<double> latent_from_seed(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> z(dim);
  for (double& v : z) v = n(rng);
  return z;
}

template <typename S>
class Generator {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  /// Column-major block inside the flat parameter vector.
  struct Block {
    std::size_t offset = 0;
    int rows = 0;
    int cols = 1;
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  };
  struct Dense {
    Block weight;
    Block bias;
    double gain = 1.0;  // runtime weight scale (equalized learning rate)
  };
  struct SynthLayer {
    Dense affine;      // style_dim -> in_channels, bias initialized to 1
    Dense conv;        // in_channels -> channels
    int prev_channels = 0;
    int feature_channels = 0;
    int in_channels() const { return prev_channels + feature_channels; }
  };

  struct LayerCache {
    Mat x;
    Vec style;
    Mat wmod;
    Vec demod;
    Mat u;
    Mat y;
    int n = 0;        // input grid side
    int margin = 0;   // input grid margin
    bool upsample = false;
    int crop = 0;
  };
  struct Cache {
    Vec z;
    std::vector<Vec> map_pre;
    std::vector<Vec> map_in;
    Vec w;
    std::vector<LayerCache> layers;
    Vec rgb_style;
    Mat rgb_x;
    int out_n = 0;
  };

  Generator() = default;

  Generator(GeneratorConfig config, std::vector<FrequencyBin> bins) : config_(std::move(config)), bins_(std::move(bins)) {
    config_.validate();
    layout();
    params_.assign(param_count_, S(0));
  }

  /// Fresh network: frequency bins and weights drawn from `seed`.
  static Generator create(const GeneratorConfig& config, std::uint64_t seed) {
    config.validate();
    auto bins = build_bins(config.binning, config.cfg.s_max, config.injection_layers(), seed ^ 0x9e3779b97f4a7c15ULL);
    Generator g(config, std::move(bins));
    g.initialize(seed);
    return g;
  }

  template <typename T>
  Generator<T> cast() const {
    Generator<T> g(config_, bins_);
    for (std::size_t i = 0; i < params_.size(); ++i) g.params()[i] = static_cast<T>(params_[i]);
    return g;
  }

  const GeneratorConfig& config() const { return config_; }
  const std::vector<FrequencyBin>& bins() const { return bins_; }
  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }
  std::size_t param_count() const { return param_count_; }
  const std::vector<SynthLayer>& synth_layers() const { return synth_; }

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : params_) v = static_cast<S>(n(rng));
    auto fill = [&](const Block& b, S value) { std::fill_n(params_.begin() + b.offset, b.size(), value); };
    for (const auto& d : mapping_) fill(d.bias, S(0));
    for (const auto& l : synth_) {
      fill(l.affine.bias, S(1));
      fill(l.conv.bias, S(0));
    }
    fill(rgb_affine_.bias, S(1));
    fill(rgb_.bias, S(0));
  }

  /// Grid margin each layer must be evaluated with so that the output has
  /// `out_margin` extra pixels per side.
  std::vector<int> input_margins(int out_margin) const {
    const int L = static_cast<int>(config_.layers.size());
    const int R = config_.lowpass_radius;
    const int T = config_.upsample_taps;
    std::vector<int> m(L);
    m[L - 1] = out_margin + R;
    for (int l = L - 2; l >= 0; --l) {
      if (config_.layers[l + 1].resolution == 2 * config_.layers[l].resolution)
        m[l] = (m[l + 1] + 2 * T - 1 + 1) / 2 + R;
      else
        m[l] = m[l + 1] + R;
    }
    return m;
  }

  Vec mapping(const std::vector<double>& z, Cache* cache) const {
    if (static_cast<int>(z.size()) != config_.latent_dim) throw DomainError("latent has the wrong dimension");
    Vec h(z.size());
    double ms = 0.0;
    for (double v : z) ms += v * v;
    const double norm = 1.0 / std::sqrt(ms / z.size() + 1e-8);
    for (std::size_t i = 0; i < z.size(); ++i) h[i] = static_cast<S>(z[i] * norm);
    if (cache) cache->z = h;
    for (const auto& d : mapping_) {
      const Vec pre = weight(d) * h + bias(d);
      if (cache) {
        cache->map_in.push_back(h);
        cache->map_pre.push_back(pre);
      }
      h = lrelu(pre);
    }
    return h;
  }

  /// Raw output (3 x n^2, nominally in [-1, 1]) for a patch extended by
  /// out_margin pixels per side, n = p + 2 out_margin.
  Mat synthesize(const std::vector<double>& z, const PatchSpec& spec, int out_margin = 0, Cache* cache = nullptr) const {
    if (spec.scale < 0.0 || spec.scale > config_.cfg.s_max)
      throw DomainError("patch scale outside [0, s_max]");
    if (out_margin < 0) throw DomainError("output margin must be non-negative");
    const Vec w = mapping(z, cache);
    if (cache) cache->w = w;
    return synthesize_from_style(w, spec, out_margin, cache);
  }

  Mat synthesize_from_style(const Vec& w, const PatchSpec& spec, int out_margin, Cache* cache) const {
    const auto margins = input_margins(out_margin);
    const int L = static_cast<int>(config_.layers.size());
    Mat carry;
    for (int l = 0; l < L; ++l) {
      const auto& spec_l = config_.layers[l];
      const auto& layer = synth_[l];
      const int m = margins[l];
      const int n = spec_l.resolution + 2 * m;
      Mat x(layer.in_channels(), static_cast<Eigen::Index>(n) * n);
      if (layer.prev_channels > 0) x.topRows(layer.prev_channels) = carry;
      if (layer.feature_channels > 0)
        x.bottomRows(layer.feature_channels) = rasterize_features<S>(
            bins_, l, spec, layer_grid(spec_l.resolution, m), spec_l.limit, config_.binning);
      const Vec style = weight(layer.affine) * w + bias(layer.affine);
      const Mat wmod = weight(layer.conv) * style.asDiagonal();
      const Vec demod = (wmod.array().square().rowwise().sum() + S(1e-8)).rsqrt().matrix();
      Mat u = wmod * x;
      Mat y = demod.asDiagonal() * u;
      y.colwise() += bias(layer.conv);
      Mat a = lrelu(y);
      const auto lp = lowpass(n, spec_l);
      Mat f = nn::apply2d(a, lp);
      int side = lp.n_out;
      bool up = false;
      int crop = 0;
      if (l + 1 < L && config_.layers[l + 1].resolution == 2 * spec_l.resolution) {
        const auto us = nn::upsample_filter(side, config_.upsample_taps);
        f = nn::apply2d(f, us);
        side = us.n_out;
        up = true;
      }
      const int target = l + 1 < L ? config_.layers[l + 1].resolution + 2 * margins[l + 1]
                                   : config_.cfg.patch_resolution + 2 * out_margin;
      crop = (side - target) / 2;
      if (crop < 0 || side - 2 * crop != target) throw DomainError("internal margin plan mismatch");
      carry = nn::crop2d(f, side, crop);
      if (cache) {
        LayerCache lc;
        lc.x = std::move(x);
        lc.style = style;
        lc.wmod = wmod;
        lc.demod = demod;
        lc.u = std::move(u);
        lc.y = std::move(y);
        lc.n = n;
        lc.margin = m;
        lc.upsample = up;
        lc.crop = crop;
        cache->layers.push_back(std::move(lc));
      }
    }
    const Vec rs = weight(rgb_affine_) * w + bias(rgb_affine_);
    Mat out = (weight(rgb_) * rs.asDiagonal()) * carry;
    out.colwise() += bias(rgb_);
    if (cache) {
      cache->rgb_style = rs;
      cache->rgb_x = std::move(carry);
      cache->out_n = config_.cfg.patch_resolution + 2 * out_margin;
    }
    return out;
  }

  /// Accumulates d(loss)/d(params) into grad given d(loss)/d(raw output).
  void backward(const Cache& c, const Mat& d_out, std::vector<S>& grad) const {
    if (grad.size() != param_count_) grad.assign(param_count_, S(0));
    Vec dw = Vec::Zero(config_.style_dim);
    // toRGB
    {
      const Mat wm = weight(rgb_) * c.rgb_style.asDiagonal();
      add_bias_grad(rgb_, d_out.rowwise().sum(), grad);
      const Mat dwm = d_out * c.rgb_x.transpose();
      Mat dx = wm.transpose() * d_out;
      add_weight_grad(rgb_, dwm * c.rgb_style.asDiagonal(), grad);
      const Vec dstyle = (dwm.array() * weight(rgb_).array()).colwise().sum().transpose().matrix();
      dense_backward(rgb_affine_, c.w, dstyle, grad, dw);
      backward_layers(c, std::move(dx), grad, dw);
    }
    // Mapping network.
    Vec dh = dw;
    for (int k = static_cast<int>(mapping_.size()) - 1; k >= 0; --k) {
      const Vec dpre = lrelu_backward(c.map_pre[k], dh);
      Vec dprev;
      dense_backward(mapping_[k], c.map_in[k], dpre, grad, dprev);
      dh = dprev;
    }
  }

  /// Intermediate activations: for each layer the concatenated input
  /// (activations then Fourier channels) and the post-filter output.
  struct LayerTrace {
    int resolution = 0;
    int grid_side = 0;
    int activation_channels = 0;
    int feature_channels = 0;
    Mat input;
  };
  std::vector<LayerTrace> injection_forward(const std::vector<double>& z, const PatchSpec& spec) const {
    Cache cache;
    synthesize(z, spec, 0, &cache);
    std::vector<LayerTrace> out;
    for (std::size_t l = 0; l < synth_.size(); ++l)
      out.push_back({config_.layers[l].resolution, cache.layers[l].n, synth_[l].prev_channels,
                     synth_[l].feature_channels, cache.layers[l].x});
    return out;
  }

  static S slope(S y) { return y > S(0) ? S(std::numbers::sqrt2) : S(0.2 * std::numbers::sqrt2); }

 private:
  Mat lrelu(const Mat& y) const { return y.unaryExpr([](S v) { return v * slope(v); }); }
  Vec lrelu(const Vec& y) const { return y.unaryExpr([](S v) { return v * slope(v); }); }
  Vec lrelu_backward(const Vec& pre, const Vec& d) const {
    return (d.array() * pre.unaryExpr([](S v) { return slope(v); }).array()).matrix();
  }

  nn::AxisFilter lowpass(int n, const LayerSpec& l) const {
    return nn::lowpass_filter(n, l.limit / l.resolution, config_.lowpass_radius);
  }

  Mat weight(const Dense& d) const {
    return Eigen::Map<const Mat>(params_.data() + d.weight.offset, d.weight.rows, d.weight.cols) * static_cast<S>(d.gain);
  }
  Vec bias(const Dense& d) const { return Eigen::Map<const Vec>(params_.data() + d.bias.offset, d.bias.rows); }

  void add_weight_grad(const Dense& d, const Mat& g_eff, std::vector<S>& grad) const {
    Eigen::Map<Mat>(grad.data() + d.weight.offset, d.weight.rows, d.weight.cols) += g_eff * static_cast<S>(d.gain);
  }
  void add_bias_grad(const Dense& d, const Vec& g, std::vector<S>& grad) const {
    Eigen::Map<Vec>(grad.data() + d.bias.offset, d.bias.rows) += g;
  }
  /// y = W x + b: accumulate parameter grads, return dx.
  void dense_backward(const Dense& d, const Vec& x, const Vec& dy, std::vector<S>& grad, Vec& dx) const {
    add_weight_grad(d, dy * x.transpose(), grad);
    add_bias_grad(d, dy, grad);
    const Vec g = weight(d).transpose() * dy;
    if (dx.size() == 0) dx = g;
    else dx += g;
  }

  void backward_layers(const Cache& c, Mat d_carry, std::vector<S>& grad, Vec& dw) const {
    for (int l = static_cast<int>(synth_.size()) - 1; l >= 0; --l) {
      const auto& lc = c.layers[l];
      const auto& layer = synth_[l];
      const auto& spec_l = config_.layers[l];
      const auto lp = lowpass(lc.n, spec_l);
      int side = lp.n_out;
      nn::AxisFilter us;
      if (lc.upsample) {
        us = nn::upsample_filter(side, config_.upsample_taps);
        side = us.n_out;
      }
      Mat df = nn::pad2d(d_carry, side, lc.crop);
      if (lc.upsample) df = nn::apply2d_adjoint(df, us);
      const Mat da = nn::apply2d_adjoint(df, lp);
      const Mat dy = (da.array() * lc.y.unaryExpr([](S v) { return slope(v); }).array()).matrix();
      add_bias_grad(layer.conv, dy.rowwise().sum(), grad);
      const Mat du = lc.demod.asDiagonal() * dy;
      const Vec ddemod = (dy.array() * lc.u.array()).rowwise().sum().matrix();
      Mat dwm = du * lc.x.transpose();
      const Vec k = (-ddemod.array() * lc.demod.array().cube()).matrix();
      dwm += k.asDiagonal() * lc.wmod;
      if (layer.prev_channels > 0) d_carry = (lc.wmod.transpose() * du).topRows(layer.prev_channels);
      add_weight_grad(layer.conv, dwm * lc.style.asDiagonal(), grad);
      const Vec dstyle = (dwm.array() * weight(layer.conv).array()).colwise().sum().transpose().matrix();
      dense_backward(layer.affine, c.w, dstyle, grad, dw);
    }
  }

  void layout() {
    std::size_t off = 0;
    auto block = [&](int rows, int cols) {
      Block b{off, rows, cols};
      off += b.size();
      return b;
    };
    auto dense = [&](int out, int in) { return Dense{block(out, in), block(out, 1), 1.0 / std::sqrt(double(in))}; };
    mapping_.clear();
    synth_.clear();
    int in = config_.latent_dim;
    for (int k = 0; k < config_.mapping_layers; ++k) {
      mapping_.push_back(dense(config_.style_dim, in));
      in = config_.style_dim;
    }
    int prev = 0;
    for (std::size_t l = 0; l < config_.layers.size(); ++l) {
      SynthLayer s;
      s.prev_channels = prev;
      s.feature_channels = config_.layers[l].injects ? assigned_count(bins_, static_cast<int>(l)) : 0;
      if (s.in_channels() == 0) throw ConfigError("generator layer " + std::to_string(l) + " has no inputs");
      s.affine = dense(s.in_channels(), config_.style_dim);
      s.conv = dense(config_.layers[l].channels, s.in_channels());
      synth_.push_back(s);
      prev = config_.layers[l].channels;
    }
    rgb_affine_ = dense(prev, config_.style_dim);
    rgb_ = dense(3, prev);
    param_count_ = off;
  }

  GeneratorConfig config_;
  std::vector<FrequencyBin> bins_;
  std::vector<S> params_;
  std::size_t param_count_ = 0;
  std::vector<Dense> mapping_;
  std::vector<SynthLayer> synth_;
  Dense rgb_affine_;
  Dense rgb_;
};

/// Raw network output to an image in [0, 1].
template <typename Mat>
Image raw_to_image(const Mat& raw, int n) {
  Image img(n, n);
  for (int k = 0; k < n * n; ++k)
    for (int ch = 0; ch < 3; ++ch)
      img.data[static_cast<std::size_t>(k) * 3 + ch] =
          std::clamp(static_cast<float>((raw(ch, k) + 1.0) * 0.5), 0.0f, 1.0f);
  return img;
}

/// Image in [0, 1] to the network's [-1, 1] range, 3 x n^2.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> image_to_raw(const Image& img) {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> m(3, static_cast<Eigen::Index>(img.width) * img.height);
  for (int k = 0; k < img.width * img.height; ++k)
    for (int ch = 0; ch < 3; ++ch) m(ch, k) = static_cast<S>(2.0 * img.data[static_cast<std::size_t>(k) * 3 + ch] - 1.0);
  return m;
}

}  // namespace scalespace
