#pragma once

// Adversarial training: progressive scale-bin schedule, Beta-distributed
// scale offsets for the cross-scale consistency loss (gradient routed to
// one generator evaluation per pair), lazy R1, Adam, checkpoints and
// JSON-lines metrics.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalespace/checkpoint.hpp"
#include "scalespace/consistency.hpp"
#include "scalespace/core.hpp"
#include "scalespace/dataset.hpp"
#include "scalespace/nn/discriminator.hpp"
#include "scalespace/nn/generator.hpp"

namespace scalespace {

// ---------------------------------------------------------------------------
// Scale sampling

struct ScheduleConfig {
  double lambda = 1.0;       // rate of the initial negative exponential
  double i1_fraction = 0.2;  // end of the coarse-first phase
  double i2_fraction = 0.6;  // start of the fine-weighted phase

  void validate() const {
    if (!(lambda >= 0)) throw ConfigError("schedule lambda must be non-negative");
    if (!(0 <= i1_fraction && i1_fraction < i2_fraction)) throw ConfigError("schedule needs 0 <= i1 < i2");
  }
};

inline void to_json(nlohmann::json& j, const ScheduleConfig& s) {
  j = nlohmann::json{{"lambda", s.lambda}, {"i1_fraction", s.i1_fraction}, {"i2_fraction", s.i2_fraction}};
}

inline void from_json(const nlohmann::json& j, ScheduleConfig& s) {
  s.lambda = j.value("lambda", s.lambda);
  s.i1_fraction = j.value("i1_fraction", s.i1_fraction);
  s.i2_fraction = j.value("i2_fraction", s.i2_fraction);
}

/// Bin distribution as a function of images seen: exp(-lambda b) up to i1,
/// uniform halfway between i1 and i2, proportional to 1 + b from i2 on, with
/// linear interpolation of the probability vectors between anchors.
class TrainingSchedule {
 public:
  TrainingSchedule(int bins, double planned_images, ScheduleConfig cfg = {})
      : bins_(bins), cfg_(cfg), i1_(cfg.i1_fraction * planned_images), i2_(cfg.i2_fraction * planned_images) {
    cfg_.validate();
    if (bins < 1) throw ConfigError("schedule needs at least one bin");
    if (!(planned_images > 0)) throw ConfigError("planned image count must be positive");
  }

  int bins() const { return bins_; }
  double i1() const { return i1_; }
  double i2() const { return i2_; }

  std::vector<double> exponential() const {
    return normalized([&](int b) { return std::exp(-cfg_.lambda * b); });
  }
  std::vector<double> uniform() const {
    return normalized([](int) { return 1.0; });
  }
  std::vector<double> linear() const {
    return normalized([](int b) { return 1.0 + b; });
  }

  std::vector<double> distribution(double images_seen) const {
    const double mid = 0.5 * (i1_ + i2_);
    if (images_seen <= i1_) return exponential();
    if (images_seen >= i2_) return linear();
    if (images_seen <= mid) return mix(exponential(), uniform(), (images_seen - i1_) / (mid - i1_));
    return mix(uniform(), linear(), (images_seen - mid) / (i2_ - mid));
  }

 private:
  template <typename F>
  std::vector<double> normalized(F f) const {
    std::vector<double> p(bins_);
    double sum = 0.0;
    for (int b = 0; b < bins_; ++b) sum += p[b] = f(b);
    for (double& v : p) v /= sum;
    return p;
  }
  static std::vector<double> mix(const std::vector<double>& a, const std::vector<double>& b, double t) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1 - t) * a[i] + t * b[i];
    return out;
  }

  int bins_;
  ScheduleConfig cfg_;
  double i1_;
  double i2_;
};

inline int sample_scale_bin(const std::vector<double>& distribution, std::mt19937_64& rng) {
  std::discrete_distribution<int> d(distribution.begin(), distribution.end());
  return d(rng);
}

/// Scale uniform within bin b, truncated at s_max.
inline double sample_scale_in_bin(int bin, double s_max, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(bin, std::min<double>(bin + 1, s_max));
  return u(rng);
}

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
};

/// Shape of the offset distribution; for s >= 1 its mode s (a-1)/(a+b-2) is 1.
inline BetaParams beta_params(double s) {
  const double m = std::max(1.0, s);
  const double a = std::pow(m, 0.25);
  return {a, (a - 1.0) * m - a + 2.0};
}

/// Scale offset in [0, s]; 0 (no pair) for s <= 0.
inline double sample_delta_scale(double s, std::mt19937_64& rng) {
  if (!(s > 0)) return 0.0;
  const auto [a, b] = beta_params(s);
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return s * (x / (x + y));
}

// ---------------------------------------------------------------------------
// Losses

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ConsistencyEvaluation {
  double loss = 0.0;
  bool skipped = false;
  GradientRoute route = GradientRoute::kNone;
  int evaluations = 0;           // generator forward passes
  int gradient_evaluations = 0;  // of which backpropagated into parameters
};

inline double samples_per_cycle(const ScaleSpaceConfig& cfg) { return cfg.patch_resolution / cfg.f_min; }

/// Consistency between G(z, c, s) downsampled by 2^ds and the central crop
/// of G(z, c, s - ds). Images are compared unclamped in [0, 1] units.
/// Parameter gradients (times grad_scale) come from the routed evaluation
/// only; the other one runs without a cache.
template <typename S>
ConsistencyEvaluation consistency_loss(const Generator<S>& g, const std::vector<double>& z, const PatchSpec& fine,
                                       double delta_s, const ConsistencyLossConfig& cfg, GradientRoute route,
                                       std::vector<S>* grad = nullptr, double grad_scale = 1.0) {
  using Mat = typename Generator<S>::Mat;
  if (!(delta_s > 0 && delta_s <= fine.scale + 1e-12))
    throw DomainError("consistency offset must satisfy 0 < ds <= s");
  ConsistencyEvaluation ev;
  ev.route = grad ? route : GradientRoute::kNone;
  const int p = g.config().cfg.patch_resolution;
  const ConsistencyGeometry geo(p, delta_s, cfg.kernel, samples_per_cycle(g.config().cfg));
  if (!geo.valid()) {
    ev.skipped = true;
    return ev;
  }
  const PatchSpec coarse{fine.center, std::max(0.0, fine.scale - delta_s)};
  auto to_unit = [](const Mat& raw, int n) {
    Image img(n, n);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((raw.data()[i] + S(1)) * S(0.5));
    return img;
  };
  typename Generator<S>::Cache cache;
  const bool fine_routed = ev.route == GradientRoute::kFine;
  const bool coarse_routed = ev.route == GradientRoute::kCoarse;
  const int nf = geo.fine_resolution();
  const Image fine_img = to_unit(g.synthesize(z, fine, geo.margin(), fine_routed ? &cache : nullptr), nf);
  const Image coarse_img = to_unit(g.synthesize(z, coarse, 0, coarse_routed ? &cache : nullptr), p);
  ev.evaluations = 2;
  const auto r = consistency_distance(geo, fine_img, coarse_img, cfg, ev.route);
  ev.loss = r.loss;
  if (ev.route != GradientRoute::kNone) {
    const Image& gi = fine_routed ? r.grad_fine : r.grad_coarse;
    const int n = fine_routed ? nf : p;
    Mat d(3, static_cast<Eigen::Index>(n) * n);
    for (std::size_t i = 0; i < gi.data.size(); ++i) d.data()[i] = static_cast<S>(0.5 * grad_scale * gi.data[i]);
    g.backward(cache, d, *grad);
    ev.gradient_evaluations = 1;
  }
  return ev;
}

/// Lazy R1 on real inputs: value = mean over x of (gamma / 2) |grad_x D|^2.
/// Its parameter gradient gamma * d/dtheta (grad_x D . v), v = grad_x D held
/// fixed, is the derivative of grad_theta D(x + e v) in e. With the
/// activation pattern of x frozen the critic is linear in x, so a central
/// difference of parameter gradients along v gives it exactly.
template <typename Critic>
double r1_penalty(const Critic& d, const std::vector<typename Critic::Mat>& reals, const std::vector<int>& bins,
                  double gamma, double weight, std::vector<typename Critic::Scalar>* grad) {
  using S = typename Critic::Scalar;
  double value = 0.0;
  const double n = static_cast<double>(reals.size());
  for (std::size_t i = 0; i < reals.size(); ++i) {
    typename Critic::Cache base;
    d.forward(reals[i], bins[i], &base);
    const typename Critic::Mat v = d.backward(base, S(1), nullptr);
    const double sq = static_cast<double>(v.squaredNorm());
    value += 0.5 * gamma * sq / n;
    if (!grad || sq == 0.0) continue;
    const double eps = 1.0 / std::sqrt(sq / static_cast<double>(v.size()));
    std::vector<S> gp(grad->size(), S(0));
    std::vector<S> gm(grad->size(), S(0));
    typename Critic::Cache cp;
    typename Critic::Cache cm;
    d.forward((reals[i] + static_cast<S>(eps) * v).eval(), bins[i], &cp, &base);
    d.backward(cp, S(1), &gp);
    d.forward((reals[i] - static_cast<S>(eps) * v).eval(), bins[i], &cm, &base);
    d.backward(cm, S(1), &gm);
    const double k = weight * gamma / (2.0 * eps * n);
    for (std::size_t j = 0; j < grad->size(); ++j) (*grad)[j] += static_cast<S>(k * (double(gp[j]) - double(gm[j])));
  }
  return value;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 0.0025;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

inline void to_json(nlohmann::json& j, const AdamConfig& a) {
  j = nlohmann::json{{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

inline void from_json(const nlohmann::json& j, AdamConfig& a) {
  a.lr = j.value("lr", a.lr);
  a.beta1 = j.value("beta1", a.beta1);
  a.beta2 = j.value("beta2", a.beta2);
  a.eps = j.value("eps", a.eps);
}

struct Adam {
  AdamConfig cfg;
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t t = 0;

  void step(std::vector<float>& params, const std::vector<float>& grad) {
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0f);
      v.assign(params.size(), 0.0f);
    }
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const double lr = cfg.lr * std::sqrt(c2) / c1;
    const auto b1 = static_cast<float>(cfg.beta1);
    const auto b2 = static_cast<float>(cfg.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      params[i] -= static_cast<float>(lr * m[i] / (std::sqrt(double(v[i])) + cfg.eps * std::sqrt(c2)));
    }
  }
};

// ---------------------------------------------------------------------------
// Configuration

struct TrainingConfig {
  std::uint64_t seed = 1;
  std::int64_t steps = 1000;
  std::int64_t planned_images = 0;  // 0: steps * batch_size
  int batch_size = 8;
  int consistency_batch = 4;
  ModelMode mode = ModelMode::kGenerative;
  int features_per_bin = 48;
  std::optional<GeneratorConfig> generator;  // default plan if absent
  DiscriminatorConfig discriminator;
  bool scale_conditioning = false;
  double augment_probability = 0.0;  // horizontal flips of real and fake inputs
  AdamConfig g_optimizer;
  AdamConfig d_optimizer;
  double r1_gamma = 1.0;
  int r1_interval = 16;
  ConsistencyLossConfig consistency;
  ScheduleConfig schedule;
  double ema_half_life_images = 4000;
  double ema_rampup = 0.05;  // half-life capped at this fraction of images seen
  double divergence_threshold = 1e6;
  std::int64_t checkpoint_every = 500;

  std::int64_t planned() const { return planned_images > 0 ? planned_images : steps * batch_size; }

  void validate() const {
    if (steps < 0 || batch_size < 1 || consistency_batch < 0) throw ConfigError("steps, batch_size and consistency_batch must be positive");
    if (!(augment_probability >= 0 && augment_probability <= 1)) throw ConfigError("augment_probability must be in [0, 1]");
    if (r1_gamma < 0 || r1_interval < 1) throw ConfigError("r1_gamma must be >= 0 and r1_interval >= 1");
    if (!(g_optimizer.lr > 0 && d_optimizer.lr > 0)) throw ConfigError("learning rates must be positive");
    if (ema_half_life_images < 0 || checkpoint_every < 1) throw ConfigError("ema_half_life_images and checkpoint_every must be positive");
    consistency.validate();
    schedule.validate();
    if (generator) generator->validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainingConfig& t) {
  j = nlohmann::json{{"seed", t.seed},
                     {"steps", t.steps},
                     {"planned_images", t.planned_images},
                     {"batch_size", t.batch_size},
                     {"consistency_batch", t.consistency_batch},
                     {"mode", to_string(t.mode)},
                     {"features_per_bin", t.features_per_bin},
                     {"discriminator", t.discriminator},
                     {"scale_conditioning", t.scale_conditioning},
                     {"augment_probability", t.augment_probability},
                     {"g_optimizer", t.g_optimizer},
                     {"d_optimizer", t.d_optimizer},
                     {"r1_gamma", t.r1_gamma},
                     {"r1_interval", t.r1_interval},
                     {"consistency",
                      {{"weight", t.consistency.weight},
                       {"l1_weight", t.consistency.l1_weight},
                       {"perceptual_weight", t.consistency.perceptual_weight},
                       {"kernel", t.consistency.kernel}}},
                     {"schedule", t.schedule},
                     {"ema_half_life_images", t.ema_half_life_images},
                     {"ema_rampup", t.ema_rampup},
                     {"divergence_threshold", t.divergence_threshold},
                     {"checkpoint_every", t.checkpoint_every}};
  j["generator"] = t.generator ? nlohmann::json(*t.generator) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, TrainingConfig& t) {
  t.seed = j.value("seed", t.seed);
  t.steps = j.value("steps", t.steps);
  t.planned_images = j.value("planned_images", t.planned_images);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.consistency_batch = j.value("consistency_batch", t.consistency_batch);
  if (j.contains("mode")) t.mode = parse_mode(j.at("mode").get<std::string>());
  t.features_per_bin = j.value("features_per_bin", t.features_per_bin);
  if (j.contains("generator") && !j.at("generator").is_null()) t.generator = j.at("generator").get<GeneratorConfig>();
  if (j.contains("discriminator")) from_json(j.at("discriminator"), t.discriminator);
  t.scale_conditioning = j.value("scale_conditioning", t.scale_conditioning);
  t.augment_probability = j.value("augment_probability", t.augment_probability);
  if (j.contains("g_optimizer")) from_json(j.at("g_optimizer"), t.g_optimizer);
  if (j.contains("d_optimizer")) from_json(j.at("d_optimizer"), t.d_optimizer);
  t.r1_gamma = j.value("r1_gamma", t.r1_gamma);
  t.r1_interval = j.value("r1_interval", t.r1_interval);
  if (j.contains("consistency")) {
    const auto& c = j.at("consistency");
    t.consistency.weight = c.value("weight", t.consistency.weight);
    t.consistency.l1_weight = c.value("l1_weight", t.consistency.l1_weight);
    t.consistency.perceptual_weight = c.value("perceptual_weight", t.consistency.perceptual_weight);
    if (c.contains("kernel")) t.consistency.kernel = c.at("kernel").get<DownsampleKernel>();
  }
  if (j.contains("schedule")) from_json(j.at("schedule"), t.schedule);
  t.ema_half_life_images = j.value("ema_half_life_images", t.ema_half_life_images);
  t.ema_rampup = j.value("ema_rampup", t.ema_rampup);
  t.divergence_threshold = j.value("divergence_threshold", t.divergence_threshold);
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
}

/// Raised when a loss is non-finite or exceeds the divergence threshold;
/// the message carries the batch specs of the offending step.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Objectives over explicit sample lists

struct FakeSample {
  std::vector<double> z;
  PatchSpec spec;
  int bin = 0;
  bool flip = false;
};

struct RealSample {
  const Image* image = nullptr;
  int bin = 0;
  bool flip = false;
};

struct ConsistencySample {
  std::vector<double> z;
  PatchSpec spec;
  double delta_s = 0.0;
  GradientRoute route = GradientRoute::kFine;
};

struct GeneratorObjective {
  double adversarial = 0.0;  // mean softplus(-D(G(z)))
  double consistency = 0.0;  // mean over non-skipped pairs
  int consistency_pairs = 0;
  int consistency_skipped = 0;
  int consistency_gradient_evaluations = 0;
  double total = 0.0;
};

template <typename S>
GeneratorObjective generator_objective(const Generator<S>& g, const Discriminator<S>& d, const std::vector<FakeSample>& fakes,
                                       const std::vector<ConsistencySample>& pairs, const ConsistencyLossConfig& ccfg,
                                       std::vector<S>* grad) {
  using Mat = typename Generator<S>::Mat;
  const int p = g.config().cfg.patch_resolution;
  GeneratorObjective out;
  for (const auto& f : fakes) {
    typename Generator<S>::Cache gc;
    typename Discriminator<S>::Cache dc;
    const Mat raw = g.synthesize(f.z, f.spec, 0, grad ? &gc : nullptr);
    const double score = d.forward(f.flip ? nn::flip_x(raw, p) : raw, f.bin, grad ? &dc : nullptr);
    out.adversarial += softplus(-score) / fakes.size();
    if (!grad) continue;
    Mat dx = d.backward(dc, static_cast<S>(-sigmoid(-score) / fakes.size()), nullptr);
    if (f.flip) dx = nn::flip_x(dx, p);
    g.backward(gc, dx, *grad);
  }
  // The mean runs over pairs that turn out valid, so gradients are collected
  // unscaled and normalized at the end.
  std::vector<S> gc;
  const bool want = grad && ccfg.weight > 0;
  if (want) gc.assign(grad->size(), S(0));
  for (const auto& c : pairs) {
    if (!(c.delta_s > 0)) {
      ++out.consistency_skipped;
      continue;
    }
    const auto ev = consistency_loss(g, c.z, c.spec, c.delta_s, ccfg, c.route, want ? &gc : nullptr);
    if (ev.skipped) {
      ++out.consistency_skipped;
      continue;
    }
    ++out.consistency_pairs;
    out.consistency += ev.loss;
    out.consistency_gradient_evaluations += ev.gradient_evaluations;
  }
  if (out.consistency_pairs > 0) {
    out.consistency /= out.consistency_pairs;
    if (want)
      for (std::size_t i = 0; i < gc.size(); ++i) (*grad)[i] += static_cast<S>(ccfg.weight / out.consistency_pairs) * gc[i];
  }
  out.total = out.adversarial + ccfg.weight * out.consistency;
  return out;
}

struct DiscriminatorObjective {
  double loss = 0.0;        // mean softplus(D(fake)) + mean softplus(-D(real))
  double real_score = 0.0;  // mean raw scores
  double fake_score = 0.0;
};

template <typename S>
DiscriminatorObjective discriminator_objective(const Discriminator<S>& d, const std::vector<typename Discriminator<S>::Mat>& reals,
                                               const std::vector<int>& real_bins,
                                               const std::vector<typename Discriminator<S>::Mat>& fakes,
                                               const std::vector<int>& fake_bins, std::vector<S>* grad) {
  DiscriminatorObjective out;
  auto pass = [&](const auto& xs, const std::vector<int>& bins, double sign) {
    double loss = 0.0;
    double mean = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      typename Discriminator<S>::Cache c;
      const double score = d.forward(xs[i], bins[i], grad ? &c : nullptr);
      loss += softplus(sign * score) / xs.size();
      mean += score / xs.size();
      if (grad) d.backward(c, static_cast<S>(sign * sigmoid(sign * score) / xs.size()), grad);
    }
    return std::pair{loss, mean};
  };
  const auto [lf, mf] = pass(fakes, fake_bins, 1.0);
  const auto [lr, mr] = pass(reals, real_bins, -1.0);
  out.loss = lf + lr;
  out.fake_score = mf;
  out.real_score = mr;
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

struct StepPlan {
  std::vector<RealSample> reals;
  std::vector<FakeSample> d_fakes;
  std::vector<FakeSample> g_fakes;
  std::vector<ConsistencySample> pairs;
  std::vector<double> bin_distribution;
  bool r1 = false;

  nlohmann::json specs() const {
    auto fake_json = [](const std::vector<FakeSample>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& f : v) a.push_back({{"center", {f.spec.center.x, f.spec.center.y}}, {"scale", f.spec.scale}, {"bin", f.bin}});
      return a;
    };
    nlohmann::json pj = nlohmann::json::array();
    for (const auto& c : pairs)
      pj.push_back({{"center", {c.spec.center.x, c.spec.center.y}}, {"scale", c.spec.scale}, {"delta_s", c.delta_s}});
    nlohmann::json rb = nlohmann::json::array();
    for (const auto& r : reals) rb.push_back(r.bin);
    return {{"real_bins", rb}, {"d_fakes", fake_json(d_fakes)}, {"g_fakes", fake_json(g_fakes)}, {"pairs", pj}};
  }
};

struct StepMetrics {
  std::int64_t step = 0;
  std::int64_t images_seen = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double g_adversarial = 0.0;
  double consistency = 0.0;
  int consistency_pairs = 0;
  int consistency_skipped = 0;
  std::optional<double> r1;
  double real_score = 0.0;
  double fake_score = 0.0;
  std::vector<double> bin_distribution;
  double seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const StepMetrics& m) {
  j = nlohmann::json{{"step", m.step},
                     {"images_seen", m.images_seen},
                     {"d_loss", m.d_loss},
                     {"g_loss", m.g_loss},
                     {"g_adversarial", m.g_adversarial},
                     {"consistency", m.consistency},
                     {"consistency_pairs", m.consistency_pairs},
                     {"consistency_skipped", m.consistency_skipped},
                     {"real_score", m.real_score},
                     {"fake_score", m.fake_score},
                     {"bin_distribution", m.bin_distribution},
                     {"seconds", m.seconds}};
  j["r1"] = m.r1 ? nlohmann::json(*m.r1) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, StepMetrics& m) {
  m.step = j.at("step").get<std::int64_t>();
  m.images_seen = j.at("images_seen").get<std::int64_t>();
  m.d_loss = j.at("d_loss").get<double>();
  m.g_loss = j.at("g_loss").get<double>();
  m.g_adversarial = j.at("g_adversarial").get<double>();
  m.consistency = j.at("consistency").get<double>();
  m.consistency_pairs = j.at("consistency_pairs").get<int>();
  m.consistency_skipped = j.at("consistency_skipped").get<int>();
  if (!j.at("r1").is_null()) m.r1 = j.at("r1").get<double>();
  m.real_score = j.at("real_score").get<double>();
  m.fake_score = j.at("fake_score").get<double>();
  m.bin_distribution = j.at("bin_distribution").get<std::vector<double>>();
  m.seconds = j.at("seconds").get<double>();
}

/// Single-threaded training controller; owns its generator, EMA copy,
/// discriminator, optimizers and RNG.
class Trainer {
 public:
  Trainer(TrainingConfig cfg, const TrainingView& data) : cfg_(std::move(cfg)), data_(&data) {
    setup();
    std::mt19937_64 init(cfg_.seed);
    g_ = Generator<float>::create(generator_config(), init());
    ema_ = g_;
    d_ = Discriminator<float>::create(discriminator_config(), init());
    rng_.seed(init());
  }

  /// Resumes from a checkpoint written by checkpoint().
  Trainer(TrainingConfig cfg, const TrainingView& data, const GeneratorCheckpoint& ck) : cfg_(std::move(cfg)), data_(&data) {
    setup();
    auto tensor = [&](const std::string& name) -> const std::vector<float>& {
      const auto it = ck.tensors.find(name);
      if (it == ck.tensors.end()) throw DataError("checkpoint lacks training state '" + name + "'");
      return it->second;
    };
    ema_ = ck.generator;
    g_ = ck.generator;
    d_ = Discriminator<float>(discriminator_config());
    auto restore = [&](std::vector<float>& dst, const std::string& name) {
      const auto& src = tensor(name);
      if (src.size() != dst.size()) throw DataError("checkpoint tensor '" + name + "' does not match the configured model");
      dst = src;
    };
    restore(g_.params(), "live_generator");
    restore(d_.params(), "discriminator");
    g_opt_.m = tensor("g_adam_m");
    g_opt_.v = tensor("g_adam_v");
    d_opt_.m = tensor("d_adam_m");
    d_opt_.v = tensor("d_adam_v");
    try {
      const auto& st = ck.metadata.at("training_state");
      g_opt_.t = st.at("g_adam_t").get<std::int64_t>();
      d_opt_.t = st.at("d_adam_t").get<std::int64_t>();
      std::istringstream(st.at("rng").get<std::string>()) >> rng_;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint training state is incomplete: ") + e.what());
    }
    step_ = ck.step;
    images_seen_ = ck.images_seen;
  }

  const TrainingConfig& config() const { return cfg_; }
  const TrainingSchedule& schedule() const { return *schedule_; }
  const Generator<float>& generator() const { return g_; }
  const Generator<float>& ema_generator() const { return ema_; }
  const Discriminator<float>& discriminator() const { return d_; }
  Discriminator<float>& discriminator() { return d_; }
  std::int64_t step_count() const { return step_; }
  std::int64_t images_seen() const { return images_seen_; }

  /// Draws every random choice of the next step. Reals and fakes take their
  /// bins from the same schedule distribution.
  StepPlan plan_step() {
    StepPlan plan;
    plan.bin_distribution = schedule_->distribution(static_cast<double>(images_seen_));
    const int B = cfg_.batch_size;
    std::bernoulli_distribution flip(cfg_.augment_probability);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < B; ++i) {
      const int b = sample_scale_bin(plan.bin_distribution, rng_);
      const auto& item = data_->sample_from_bin(b, rng_);
      plan.reals.push_back({item.image, cond(b), flip(rng_)});
    }
    for (int i = 0; i < B; ++i) plan.d_fakes.push_back(draw_fake(plan.bin_distribution, flip(rng_)));
    for (int i = 0; i < B; ++i) plan.g_fakes.push_back(draw_fake(plan.bin_distribution, flip(rng_)));
    for (int i = 0; i < cfg_.consistency_batch; ++i) {
      const FakeSample f = draw_fake(plan.bin_distribution, false);
      ConsistencySample c{f.z, f.spec, sample_delta_scale(f.spec.scale, rng_),
                          coin(rng_) ? GradientRoute::kFine : GradientRoute::kCoarse};
      plan.pairs.push_back(std::move(c));
    }
    plan.r1 = cfg_.r1_gamma > 0 && step_ % cfg_.r1_interval == 0;
    return plan;
  }

  StepMetrics execute(const StepPlan& plan) {
    using Mat = Discriminator<float>::Mat;
    const auto t0 = std::chrono::steady_clock::now();
    const int p = g_.config().cfg.patch_resolution;
    StepMetrics m;
    m.bin_distribution = plan.bin_distribution;

    // Discriminator update.
    std::vector<Mat> reals;
    std::vector<int> real_bins;
    for (const auto& r : plan.reals) {
      Mat x = image_to_raw<float>(*r.image);
      reals.push_back(r.flip ? nn::flip_x(x, p) : x);
      real_bins.push_back(r.bin);
    }
    std::vector<Mat> fakes;
    std::vector<int> fake_bins;
    for (const auto& f : plan.d_fakes) {
      Mat x = g_.synthesize(f.z, f.spec);
      fakes.push_back(f.flip ? nn::flip_x(x, p) : x);
      fake_bins.push_back(f.bin);
    }
    std::vector<float> gd(d_.params().size(), 0.0f);
    const auto dobj = discriminator_objective(d_, reals, real_bins, fakes, fake_bins, &gd);
    m.d_loss = dobj.loss;
    m.real_score = dobj.real_score;
    m.fake_score = dobj.fake_score;
    if (plan.r1) {
      m.r1 = r1_penalty(d_, reals, real_bins, cfg_.r1_gamma, cfg_.r1_interval, &gd);
      m.d_loss += *m.r1;
    }
    guard(m.d_loss, "discriminator", plan);
    d_opt_.step(d_.params(), gd);

    // Generator update.
    std::vector<float> gg(g_.params().size(), 0.0f);
    const auto gobj = generator_objective(g_, d_, plan.g_fakes, plan.pairs, cfg_.consistency, &gg);
    m.g_adversarial = gobj.adversarial;
    m.consistency = gobj.consistency;
    m.consistency_pairs = gobj.consistency_pairs;
    m.consistency_skipped = gobj.consistency_skipped;
    m.g_loss = gobj.total;
    guard(m.g_loss, "generator", plan);
    g_opt_.step(g_.params(), gg);

    images_seen_ += cfg_.batch_size;
    update_ema();
    ++step_;
    m.step = step_;
    m.images_seen = images_seen_;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  StepMetrics step() { return execute(plan_step()); }

  /// EMA generator as the model plus everything needed to resume.
  GeneratorCheckpoint checkpoint() const {
    GeneratorCheckpoint ck;
    ck.generator = ema_;
    ck.step = step_;
    ck.images_seen = images_seen_;
    ck.seed = cfg_.seed;
    ck.mode = cfg_.mode;
    ck.tensors["live_generator"] = g_.params();
    ck.tensors["discriminator"] = d_.params();
    ck.tensors["g_adam_m"] = g_opt_.m;
    ck.tensors["g_adam_v"] = g_opt_.v;
    ck.tensors["d_adam_m"] = d_opt_.m;
    ck.tensors["d_adam_v"] = d_opt_.v;
    std::ostringstream rng;
    rng << rng_;
    ck.metadata["training_state"] = {{"g_adam_t", g_opt_.t}, {"d_adam_t", d_opt_.t}, {"rng", rng.str()}};
    ck.metadata["training_config"] = cfg_;
    return ck;
  }

 private:
  void setup() {
    cfg_.validate();
    const auto& dcfg = data_->config();
    if (cfg_.generator && !(cfg_.generator->cfg == dcfg))
      throw ConfigError("generator scale-space config does not match the dataset");
    std::string empty;
    for (int b = 0; b < data_->bin_count(); ++b)
      if (data_->bin_size(b) == 0) empty += (empty.empty() ? "" : ", ") + std::to_string(b);
    if (!empty.empty()) throw ConfigError("dataset has empty scale bins: " + empty);
    schedule_.emplace(data_->bin_count(), static_cast<double>(cfg_.planned()), cfg_.schedule);
    g_opt_.cfg = cfg_.g_optimizer;
    d_opt_.cfg = cfg_.d_optimizer;
  }

  GeneratorConfig generator_config() const {
    return cfg_.generator ? *cfg_.generator : default_generator_config(data_->config(), cfg_.features_per_bin);
  }

  DiscriminatorConfig discriminator_config() const {
    DiscriminatorConfig d = cfg_.discriminator;
    d.patch_resolution = data_->config().patch_resolution;
    d.scale_bins = cfg_.scale_conditioning ? data_->bin_count() : 0;
    return d;
  }

  int cond(int bin) const { return cfg_.scale_conditioning ? bin : -1; }

  std::vector<double> draw_latent() {
    if (cfg_.mode == ModelMode::kReconstruction) return latent_from_seed(0, g_.config().latent_dim);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> z(g_.config().latent_dim);
    for (double& v : z) v = n(rng_);
    return z;
  }

  FakeSample draw_fake(const std::vector<double>& dist, bool flip) {
    FakeSample f;
    const int b = sample_scale_bin(dist, rng_);
    f.bin = cond(b);
    f.spec.scale = sample_scale_in_bin(b, data_->config().s_max, rng_);
    f.spec.center = sample_inside_center(f.spec.scale, rng_);
    f.z = draw_latent();
    f.flip = flip;
    return f;
  }

  void guard(double loss, const char* which, const StepPlan& plan) const {
    if (std::isfinite(loss) && std::abs(loss) <= cfg_.divergence_threshold) return;
    std::ostringstream msg;
    msg << which << " loss " << loss << " at step " << step_ + 1 << " diverged; batch specs: " << plan.specs().dump();
    throw TrainingDiverged(msg.str());
  }

  void update_ema() {
    const double half_life = std::min(cfg_.ema_half_life_images, cfg_.ema_rampup * static_cast<double>(images_seen_));
    const double beta = half_life > 0 ? std::pow(0.5, cfg_.batch_size / half_life) : 0.0;
    auto& e = ema_.params();
    const auto& g = g_.params();
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<float>(g[i] + beta * (e[i] - g[i]));
  }

  TrainingConfig cfg_;
  const TrainingView* data_;
  std::optional<TrainingSchedule> schedule_;
  Generator<float> g_;
  Generator<float> ema_;
  Discriminator<float> d_;
  Adam g_opt_;
  Adam d_opt_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
  std::int64_t images_seen_ = 0;
};

// ---------------------------------------------------------------------------
// Training run

struct TrainHooks {
  std::optional<std::filesystem::path> resume;
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const std::filesystem::path&, const GeneratorCheckpoint&)> on_checkpoint;
};

struct TrainingRun {
  std::vector<std::filesystem::path> checkpoints;
  GeneratorCheckpoint final_checkpoint;
};

inline std::filesystem::path checkpoint_stem(const std::filesystem::path& dir, std::int64_t step) {
  std::ostringstream name;
  name << "ckpt_" << std::setw(6) << std::setfill('0') << step;
  return dir / name.str();
}

/// Trains to cfg.steps, appending metrics to out/metrics.jsonl and writing
/// checkpoints every checkpoint_every steps and at the end.
inline TrainingRun train(const TrainingConfig& cfg, const DatasetManifest& manifest, const std::filesystem::path& out,
                         const TrainHooks& hooks = {}) {
  namespace fs = std::filesystem;
  const TrainingView view(manifest);
  std::optional<Trainer> trainer;
  if (hooks.resume)
    trainer.emplace(cfg, view, load_checkpoint(*hooks.resume));
  else
    trainer.emplace(cfg, view);
  fs::create_directories(out);
  std::ofstream(out / "training_config.json") << nlohmann::json(cfg).dump(2) << "\n";
  std::ofstream metrics(out / "metrics.jsonl", std::ios::app);
  TrainingRun run;
  auto save = [&] {
    const auto ck = trainer->checkpoint();
    const auto path = save_checkpoint(ck, checkpoint_stem(out, ck.step));
    run.checkpoints.push_back(path);
    if (hooks.on_checkpoint) hooks.on_checkpoint(path, ck);
  };
  if (!hooks.resume && cfg.steps > 0) save();  // untrained reference
  while (trainer->step_count() < cfg.steps) {
    const auto m = trainer->step();
    metrics << nlohmann::json(m).dump() << "\n";
    metrics.flush();
    if (hooks.on_step) hooks.on_step(m);
    if (m.step % cfg.checkpoint_every == 0 || m.step == cfg.steps) save();
  }
  run.final_checkpoint = trainer->checkpoint();
  return run;
}

}  // namespace scalespace
