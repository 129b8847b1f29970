#include <gtest/gtest.h>

#include <random>

#include "scalespace/nn/generator.hpp"
#include "test_util.hpp"

namespace scalespace {
namespace {

GeneratorConfig tiny_config() {
  GeneratorConfig g = default_generator_config(testing::toy_config(16, 4.0), 8);
  g.latent_dim = 8;
  g.style_dim = 8;
  return g;
}

TEST(Filters, LowpassAndUpsampleAdjoint) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  using Mat = Eigen::MatrixXd;
  for (const auto& f : {nn::lowpass_filter(12, 0.375, 2), nn::upsample_filter(12, 3)}) {
    Mat a = Mat::NullaryExpr(3, 144, [&] { return n(rng); });
    Mat b = Mat::NullaryExpr(3, f.n_out * f.n_out, [&] { return n(rng); });
    const double lhs = (nn::apply2d(a, f).array() * b.array()).sum();
    const double rhs = (a.array() * nn::apply2d_adjoint(b, f).array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs) + 1e-10);
  }
  // Upsampling a constant keeps it constant; a sample on the input grid
  // passes through the interpolator's neighborhood smoothly.
  const auto up = nn::upsample_filter(10, 3);
  EXPECT_EQ(up.n_out, 10);
  const Mat ones = Mat::Ones(1, 100);
  EXPECT_LT((nn::apply2d(ones, up).array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Filters, UpsampleInterpolatesSmoothSignals) {
  // A slow sinusoid sampled on the input grid is reproduced at the output
  // sample positions (taps - 0.75 + j / 2).
  const int n = 24;
  const int T = 3;
  const auto up = nn::upsample_filter(n, T);
  Eigen::MatrixXd in(1, n * n);
  auto fn = [](double x, double y) { return std::sin(0.3 * x + 0.1) * std::cos(0.2 * y); };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) in(0, y * n + x) = fn(x, y);
  const Eigen::MatrixXd out = nn::apply2d(in, up);
  double worst = 0;
  for (int y = 0; y < up.n_out; ++y)
    for (int x = 0; x < up.n_out; ++x)
      worst = std::max(worst, std::abs(out(0, y * up.n_out + x) - fn(T - 0.75 + x / 2.0, T - 0.75 + y / 2.0)));
  EXPECT_LT(worst, 0.01);
}

TEST(Generator, PlanAndChannelCounts) {
  const auto g = Generator<float>::create(default_generator_config(testing::toy_config()), 3);
  const auto& cfg = g.config();
  ASSERT_EQ(cfg.layers.size(), 5u);
  EXPECT_EQ(cfg.layers[0].resolution, 8);
  EXPECT_EQ(cfg.layers[4].resolution, 32);
  const auto trace = g.injection_forward(latent_from_seed(1, cfg.latent_dim), {{0, 0}, 0});
  for (std::size_t l = 0; l < trace.size(); ++l) {
    const int planned = l == 0 ? 0 : cfg.layers[l - 1].channels;
    EXPECT_EQ(trace[l].activation_channels, planned);
    EXPECT_EQ(trace[l].feature_channels, cfg.layers[l].injects ? assigned_count(g.bins(), static_cast<int>(l)) : 0);
    EXPECT_EQ(trace[l].input.rows(), planned + trace[l].feature_channels);
  }
  EXPECT_EQ(trace[1].feature_channels, 0);
  EXPECT_EQ(trace[0].input.rows(), assigned_count(g.bins(), 0));
  // At s = 0 the second bin (onset at delta_s_bin) is silent.
  int row = 0;
  for (const auto& b : g.bins())
    for (int a : b.layer_assignment) {
      if (a != 0) continue;
      if (b.index >= 1) EXPECT_EQ(trace[0].input.row(row).cwiseAbs().maxCoeff(), 0.0f);
      ++row;
    }
}

TEST(Generator, DeterministicAndLatentSensitive) {
  const auto g = Generator<float>::create(default_generator_config(testing::toy_config()), 3);
  const int d = g.config().latent_dim;
  const PatchSpec spec{{0.1, 0.2}, 1.3};
  const auto a = g.synthesize(latent_from_seed(1, d), spec);
  const auto b = g.synthesize(latent_from_seed(1, d), spec);
  const auto c = g.synthesize(latent_from_seed(2, d), spec);
  EXPECT_EQ(a, b);
  EXPECT_GT((a - c).cwiseAbs().mean(), 1e-3);
  EXPECT_THROW(g.synthesize(latent_from_seed(1, d), {{0, 0}, 4.5}), DomainError);
  EXPECT_THROW(g.synthesize(latent_from_seed(1, d + 1), spec), DomainError);
}

TEST(Generator, MarginExtendsPatchExactly) {
  const auto g = Generator<double>::create(default_generator_config(testing::toy_config()), 5);
  const auto z = latent_from_seed(4, g.config().latent_dim);
  const PatchSpec spec{{-0.1, 0.05}, 2.2};
  const auto core = g.synthesize(z, spec, 0);
  const auto ext = g.synthesize(z, spec, 6);
  EXPECT_LT((nn::crop2d(Eigen::MatrixXd(ext), 44, 6) - core).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Generator, ShiftByGridStepIsExactTranslation) {
  const auto g = Generator<double>::create(default_generator_config(testing::toy_config()), 5);
  const auto z = latent_from_seed(4, g.config().latent_dim);
  const int p = 32;
  const double s = 1.7;
  const Vec2 c{0.05, -0.02};
  const int k = 4;  // p / r_0 output pixels
  const double px = std::exp2(-s) / p;
  const Image a = raw_to_image(g.synthesize(z, {c, s}), p);
  const Image b = raw_to_image(g.synthesize(z, {c + Vec2{k * px, 0}, s}), p);
  double worst = 0;
  for (int y = 0; y < p; ++y)
    for (int x = 0; x + k < p; ++x)
      for (int ch = 0; ch < 3; ++ch) worst = std::max(worst, double(std::abs(a.at(x + k, y, ch) - b.at(x, y, ch))));
  EXPECT_LT(worst, 1e-6);
}

TEST(Generator, OnePixelShiftIsApproximatelyEquivariant) {
  const auto g = Generator<float>::create(default_generator_config(testing::toy_config()), 5);
  const auto z = latent_from_seed(4, g.config().latent_dim);
  const int p = 32;
  const double s = 2.5;
  const Vec2 c{0.0, 0.1};
  const double px = std::exp2(-s) / p;
  const Image a = raw_to_image(g.synthesize(z, {c, s}), p);
  const Image b = raw_to_image(g.synthesize(z, {c + Vec2{px, 0}, s}), p);
  EXPECT_LT(mean_abs_diff(a.crop(1, 0, p - 1, p), b.crop(0, 0, p - 1, p)), 0.02);
}

TEST(Generator, ContinuousInCenterAndScale) {
  const auto g = Generator<double>::create(default_generator_config(testing::toy_config()), 7);
  const auto z = latent_from_seed(2, g.config().latent_dim);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::uniform_real_distribution<double> su(0.0, 3.9);
  const double eps = 1e-5;
  double fmax = 0;
  for (const auto& b : g.bins())
    for (const auto& f : b.frequencies) fmax = std::max(fmax, f.norm());
  for (int i = 0; i < 100; ++i) {
    const PatchSpec spec{{u(rng), u(rng)}, su(rng)};
    const auto base = g.synthesize(z, spec);
    const auto dc = g.synthesize(z, {spec.center + Vec2{eps, 0}, spec.scale});
    const auto ds = g.synthesize(z, {spec.center, spec.scale + eps});
    // Feature slopes: 2 pi fmax per unit of center, and the scale slope
    // bound plus the blend slope.
    const double feat_c = 2 * std::numbers::pi * fmax;
    const double feat_s = 2 * std::numbers::pi * fmax * std::log(2.0) * std::exp2(-spec.scale) * 0.75 + 1.0;
    EXPECT_LT((dc - base).cwiseAbs().maxCoeff() / eps, 10 * feat_c);
    EXPECT_LT((ds - base).cwiseAbs().maxCoeff() / eps, 10 * feat_s);
  }
}

TEST(Generator, GradientMatchesFiniteDifferences) {
  auto g = Generator<double>::create(tiny_config(), 11);
  const auto z = latent_from_seed(3, g.config().latent_dim);
  const PatchSpec spec{{0.1, -0.1}, 2.6};
  const int margin = 2;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  const int side = 16 + 2 * margin;
  const Eigen::MatrixXd probe = Eigen::MatrixXd::NullaryExpr(3, side * side, [&] { return n(rng); });
  auto loss = [&](const Generator<double>& gen) { return (gen.synthesize(z, spec, margin).array() * probe.array()).sum(); };
  Generator<double>::Cache cache;
  const auto out = g.synthesize(z, spec, margin, &cache);
  std::vector<double> grad;
  g.backward(cache, probe, grad);
  ASSERT_EQ(grad.size(), g.param_count());
  std::uniform_int_distribution<std::size_t> pick(0, g.param_count() - 1);
  double num = 0, den = 0;
  for (int i = 0; i < 400; ++i) {
    const std::size_t k = pick(rng);
    const double orig = g.params()[k];
    // Leaky-ReLU kinks sit within 1e-5 of some pre-activations, where a
    // central difference averages two slopes; 1e-7 steps past them.
    const double h = 1e-7;
    g.params()[k] = orig + h;
    const double lp = loss(g);
    g.params()[k] = orig - h;
    const double lm = loss(g);
    g.params()[k] = orig;
    const double fd = (lp - lm) / (2 * h);
    num += (fd - grad[k]) * (fd - grad[k]);
    den += fd * fd;
  }
  EXPECT_LT(std::sqrt(num / den), 1e-3);
}

}  // namespace
}  // namespace scalespace
