#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <filesystem>
#include <map>
#include <numeric>

#include "scalespace/oracle.hpp"
#include "scalespace/training.hpp"
#include "test_util.hpp"

namespace scalespace {
namespace {

namespace fs = std::filesystem;

DatasetManifest oracle_manifest(std::vector<int> counts, double s_max = 4.0, std::uint64_t seed = 7) {
  auto ocfg = testing::toy_oracle_config();
  ocfg.cfg.s_max = s_max;
  return extract_patches(PatchSource::oracle(ocfg), {std::move(counts), seed}, ocfg.cfg);
}

TrainingConfig small_training_config() {
  TrainingConfig t;
  t.batch_size = 4;
  t.consistency_batch = 2;
  t.steps = 100;
  return t;
}

TEST(Schedule, AnchorDistributions) {
  const TrainingSchedule sched(4, 1e5);
  const auto p0 = sched.distribution(0);
  const double z = 1 + std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0);
  for (int b = 0; b < 4; ++b) EXPECT_NEAR(p0[b], std::exp(-double(b)) / z, 1e-12);
  const auto mid = sched.distribution(0.5 * (sched.i1() + sched.i2()));
  for (double v : mid) EXPECT_NEAR(v, 0.25, 1e-12);
  const auto late = sched.distribution(sched.i2() + 1);
  for (int b = 0; b < 4; ++b) EXPECT_NEAR(late[b], (b + 1) / 10.0, 1e-12);
  EXPECT_DOUBLE_EQ(sched.i1(), 2e4);
  EXPECT_DOUBLE_EQ(sched.i2(), 6e4);
}

TEST(Schedule, NormalizedAndContinuous) {
  const TrainingSchedule sched(6, 1e5);
  double max_jump = 0.0;
  auto prev = sched.distribution(0);
  for (int i = 1; i <= 100000; ++i) {
    const auto cur = sched.distribution(i);
    double sum = 0.0;
    for (std::size_t b = 0; b < cur.size(); ++b) {
      sum += cur[b];
      max_jump = std::max(max_jump, std::abs(cur[b] - prev[b]));
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
    prev = cur;
  }
  EXPECT_LT(max_jump, 1e-3);
  EXPECT_THROW(TrainingSchedule(4, 100, {1.0, 0.6, 0.2}), ConfigError);
}

TEST(DeltaScale, ParametersAndMode) {
  EXPECT_DOUBLE_EQ(beta_params(1.0).alpha, 1.0);
  EXPECT_DOUBLE_EQ(beta_params(1.0).beta, 1.0);
  EXPECT_DOUBLE_EQ(beta_params(0.3).alpha, 1.0);
  EXPECT_NEAR(beta_params(16.0).alpha, 2.0, 1e-12);
  EXPECT_NEAR(beta_params(16.0).beta, 16.0, 1e-12);
  for (double s : {1.5, 4.0, 8.0, 16.0, 100.0}) {
    const auto [a, b] = beta_params(s);
    EXPECT_NEAR(s * (a - 1) / (a + b - 2), 1.0, 1e-12) << s;
  }
  std::mt19937_64 rng(1);
  EXPECT_EQ(sample_delta_scale(0.0, rng), 0.0);
  EXPECT_EQ(sample_delta_scale(-2.0, rng), 0.0);
}

// Kolmogorov-Smirnov distance of 10^6 draws against the regularized
// incomplete beta function, plus support and histogram mode.
TEST(DeltaScale, MatchesAnalyticBetaDistribution) {
  for (double s : {1.0, 4.0, 8.0, 16.0}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(s * 101));
    const int n = 1000000;
    std::vector<double> xs(n);
    for (double& x : xs) x = sample_delta_scale(s, rng);
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    EXPECT_GE(*lo, 0.0);
    EXPECT_LE(*hi, s);
    std::sort(xs.begin(), xs.end());
    const auto [a, b] = beta_params(s);
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
      const double f = boost::math::ibeta(a, b, xs[i] / s);
      ks = std::max({ks, std::abs(f - double(i) / n), std::abs(f - double(i + 1) / n)});
    }
    EXPECT_LT(ks, 0.01) << "s=" << s;
    // Histogram of width 0.05, smoothed over 5 bins.
    const double w = 0.05;
    std::vector<double> hist(static_cast<std::size_t>(std::ceil(s / w)), 0.0);
    for (double x : xs) hist[std::min(hist.size() - 1, static_cast<std::size_t>(x / w))] += 1;
    if (s == 1.0) {
      // Beta(1, 1): flat, so no mode to locate.
      const auto [mn, mx] = std::minmax_element(hist.begin(), hist.end());
      EXPECT_LT(*mx / *mn, 1.05);
      continue;
    }
    std::size_t best = 0;
    double best_v = -1;
    for (std::size_t i = 2; i + 2 < hist.size(); ++i) {
      const double v = hist[i - 2] + hist[i - 1] + hist[i] + hist[i + 1] + hist[i + 2];
      if (v > best_v) best_v = v, best = i;
    }
    EXPECT_NEAR((best + 0.5) * w, 1.0, 0.1) << "s=" << s;
  }
}

// Minimal critic D(x) = <w, x> for checking the R1 convention.
struct LinearCritic {
  using Scalar = double;
  using Mat = Eigen::MatrixXd;
  struct Cache {
    Mat x;
  };
  std::vector<double> w;
  double forward(const Mat& x, int, Cache* c, const Cache* = nullptr) const {
    if (c) c->x = x;
    return Eigen::Map<const Eigen::VectorXd>(w.data(), w.size()).dot(Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()));
  }
  Mat backward(const Cache& c, double d_out, std::vector<double>* grad) const {
    if (grad)
      for (std::size_t i = 0; i < w.size(); ++i) (*grad)[i] += d_out * c.x.data()[i];
    Mat g(c.x.rows(), c.x.cols());
    for (std::size_t i = 0; i < w.size(); ++i) g.data()[i] = d_out * w[i];
    return g;
  }
};

TEST(R1, LinearCriticWithUnitGradient) {
  LinearCritic d;
  d.w = {0.6, 0.0, -0.8, 0.0};
  const std::vector<Eigen::MatrixXd> reals{Eigen::MatrixXd::Random(2, 2), Eigen::MatrixXd::Random(2, 2)};
  const double gamma = 3.0;
  std::vector<double> grad(4, 0.0);
  EXPECT_NEAR(r1_penalty(d, reals, {-1, -1}, gamma, 1.0, &grad), gamma / 2, 1e-12);
  // d/dw (gamma/2 |w|^2) = gamma w, scaled by the lazy weight.
  std::vector<double> lazy(4, 0.0);
  r1_penalty(d, reals, {-1, -1}, gamma, 16.0, &lazy);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(grad[i], gamma * d.w[i], 1e-6);
    EXPECT_NEAR(lazy[i], 16 * gamma * d.w[i], 1e-5);
  }
}

TEST(R1, MatchesFiniteDifferenceOnDiscriminator) {
  DiscriminatorConfig cfg{8, 4, 8, 8, 0};
  auto d = Discriminator<double>::create(cfg, 5);
  const std::vector<Eigen::MatrixXd> reals{Eigen::MatrixXd::Random(3, 64), Eigen::MatrixXd::Random(3, 64)};
  const std::vector<int> bins{-1, -1};
  std::vector<double> grad(d.params().size(), 0.0);
  r1_penalty(d, reals, bins, 1.0, 1.0, &grad);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> pick(0, grad.size() - 1);
  // The penalty jumps wherever a leaky-ReLU pattern flips, so an occasional
  // probe straddling a kink is tolerated.
  int agree = 0;
  const int probes = 60;
  for (int k = 0; k < probes; ++k) {
    const std::size_t i = pick(rng);
    const double h = 1e-6;
    const double keep = d.params()[i];
    d.params()[i] = keep + h;
    const double fp = r1_penalty(d, reals, bins, 1.0, 1.0, nullptr);
    d.params()[i] = keep - h;
    const double fm = r1_penalty(d, reals, bins, 1.0, 1.0, nullptr);
    d.params()[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    agree += std::abs(fd - grad[i]) <= 1e-3 * std::abs(fd) + 1e-9;
  }
  EXPECT_GE(agree, probes - 2);
}

TEST(Discriminator, GradientsMatchFiniteDifferences) {
  DiscriminatorConfig cfg{8, 4, 8, 8, 3};
  auto d = Discriminator<double>::create(cfg, 11);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 64);
  Discriminator<double>::Cache c;
  d.forward(x, 2, &c);
  std::vector<double> grad(d.params().size(), 0.0);
  const Eigen::MatrixXd dx = d.backward(c, 1.0, &grad);
  const double h = 1e-6;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < grad.size(); i += 7) {
    const double keep = d.params()[i];
    d.params()[i] = keep + h;
    const double fp = d.forward(x, 2);
    d.params()[i] = keep - h;
    const double fm = d.forward(x, 2);
    d.params()[i] = keep;
    num += std::abs((fp - fm) / (2 * h) - grad[i]);
    den += std::abs(grad[i]);
  }
  EXPECT_LT(num / den, 1e-5);
  num = den = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd xp = x;
    Eigen::MatrixXd xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    num += std::abs((d.forward(xp, 2) - d.forward(xm, 2)) / (2 * h) - dx.data()[i]);
    den += std::abs(dx.data()[i]);
  }
  EXPECT_LT(num / den, 1e-5);
  EXPECT_THROW(d.forward(Eigen::MatrixXd::Zero(3, 16), 0), DomainError);
}

TEST(GeneratorObjective, ReducesToNonsaturatingLossWithoutConsistency) {
  const auto gcfg = default_generator_config(testing::toy_config());
  const auto g = Generator<float>::create(gcfg, 3);
  const auto d = Discriminator<float>::create({32, 16, 64, 64, 0}, 4);
  std::vector<FakeSample> fakes;
  for (int i = 0; i < 3; ++i) fakes.push_back({latent_from_seed(i, gcfg.latent_dim), {{0.1 * i, -0.05}, 0.7 * i}, -1, i == 1});
  const std::vector<ConsistencySample> pairs{{latent_from_seed(9, gcfg.latent_dim), {{0, 0}, 2.0}, 1.0, GradientRoute::kFine}};
  ConsistencyLossConfig off;
  off.weight = 0.0;
  std::vector<float> grad(g.params().size(), 0.0f);
  const auto obj = generator_objective(g, d, fakes, pairs, off, &grad);
  double expected = 0.0;
  for (const auto& f : fakes) {
    auto raw = g.synthesize(f.z, f.spec);
    if (f.flip) raw = nn::flip_x(raw, 32);
    expected += std::log1p(std::exp(-double(d.forward(raw, -1)))) / fakes.size();
  }
  EXPECT_NEAR(obj.adversarial, expected, 1e-6);
  EXPECT_NEAR(obj.total, expected, 1e-6);
  // The consistency pair is still measured but contributes no gradient.
  std::vector<float> adv_only(g.params().size(), 0.0f);
  generator_objective(g, d, fakes, {}, off, &adv_only);
  EXPECT_EQ(grad, adv_only);
}

TEST(Consistency, ExactlyOneGeneratorEvaluationCarriesGradients) {
  const auto gcfg = default_generator_config(testing::toy_config());
  const auto g = Generator<float>::create(gcfg, 3);
  const auto z = latent_from_seed(1, gcfg.latent_dim);
  const PatchSpec spec{{0.1, 0.05}, 2.5};
  const ConsistencyLossConfig cfg;
  std::vector<float> fine(g.params().size(), 0.0f);
  std::vector<float> coarse(g.params().size(), 0.0f);
  const auto a = consistency_loss(g, z, spec, 1.0, cfg, GradientRoute::kFine, &fine);
  const auto b = consistency_loss(g, z, spec, 1.0, cfg, GradientRoute::kCoarse, &coarse);
  const auto c = consistency_loss(g, z, spec, 1.0, cfg, GradientRoute::kFine);
  for (const auto& ev : {a, b}) {
    EXPECT_EQ(ev.evaluations, 2);
    EXPECT_EQ(ev.gradient_evaluations, 1);
  }
  EXPECT_EQ(c.gradient_evaluations, 0);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.loss, c.loss);
  EXPECT_NE(fine, coarse);
  EXPECT_GT(std::inner_product(fine.begin(), fine.end(), fine.begin(), 0.0), 0.0);
  // Offsets too large for a 4-pixel comparison are skipped.
  EXPECT_TRUE(consistency_loss(g, z, {spec.center, 4.0}, 3.5, cfg, GradientRoute::kFine, &fine).skipped);
  EXPECT_THROW(consistency_loss(g, z, spec, 3.0, cfg, GradientRoute::kFine), DomainError);
  const std::vector<ConsistencySample> pairs{{z, spec, 1.0, GradientRoute::kFine},
                                             {z, spec, 0.5, GradientRoute::kCoarse},
                                             {z, spec, 0.0, GradientRoute::kFine}};
  const auto d = Discriminator<float>::create({32, 16, 64, 64, 0}, 4);
  std::vector<float> grad(g.params().size(), 0.0f);
  const auto obj = generator_objective(g, d, {}, pairs, cfg, &grad);
  EXPECT_EQ(obj.consistency_pairs, 2);
  EXPECT_EQ(obj.consistency_skipped, 1);
  EXPECT_EQ(obj.consistency_gradient_evaluations, obj.consistency_pairs);
}

TEST(Trainer, RealAndFakeBinsShareTheDistribution) {
  const auto m = oracle_manifest({3, 3, 3, 3});
  const TrainingView view(m);
  auto cfg = small_training_config();
  cfg.planned_images = 100000;
  Trainer tr(cfg, view);
  std::map<const Image*, int> bin_of;
  for (const auto& r : m.records) bin_of[&r.image] = r.scale_bin;
  std::vector<double> real(4, 0.0);
  std::vector<double> fake(4, 0.0);
  for (int step = 0; step < 10000; ++step) {
    const auto plan = tr.plan_step();
    for (const auto& r : plan.reals) real[bin_of.at(r.image)] += 1;
    for (const auto& f : plan.d_fakes) fake[std::min(3, static_cast<int>(f.spec.scale))] += 1;
  }
  // 2 x K homogeneity test.
  double chi = 0.0;
  const double nr = std::accumulate(real.begin(), real.end(), 0.0);
  const double nf = std::accumulate(fake.begin(), fake.end(), 0.0);
  for (int b = 0; b < 4; ++b) {
    const double col = real[b] + fake[b];
    const double er = col * nr / (nr + nf);
    const double ef = col * nf / (nr + nf);
    chi += (real[b] - er) * (real[b] - er) / er + (fake[b] - ef) * (fake[b] - ef) / ef;
  }
  const double pval = 1.0 - boost::math::cdf(boost::math::chi_squared(3), chi);
  EXPECT_GT(pval, 0.01) << "chi2=" << chi;
}

TEST(Trainer, EmptyBinIsAConfigurationError) {
  const auto m = oracle_manifest({2, 0, 2, 2});
  const TrainingView view(m);
  try {
    Trainer tr(small_training_config(), view);
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
}

TEST(Trainer, DivergenceGuardDumpsBatchSpecs) {
  const auto m = oracle_manifest({2, 2, 2, 2});
  const TrainingView view(m);
  auto cfg = small_training_config();
  cfg.divergence_threshold = 1e-3;
  Trainer tr(cfg, view);
  try {
    tr.step();
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("d_fakes"), std::string::npos);
  }
}

TEST(Trainer, SameSeedReproducesLosses) {
  const auto m = oracle_manifest({4, 4, 4, 4});
  const TrainingView view(m);
  Trainer a(small_training_config(), view);
  Trainer b(small_training_config(), view);
  for (int i = 0; i < 100; ++i) {
    const auto ma = a.step();
    const auto mb = b.step();
    ASSERT_NEAR(ma.d_loss, mb.d_loss, 1e-4) << i;
    ASSERT_NEAR(ma.g_loss, mb.g_loss, 1e-4) << i;
    ASSERT_TRUE(std::isfinite(ma.g_loss));
  }
  EXPECT_EQ(a.generator().params(), b.generator().params());
}

TEST(Train, ResumeContinuesTheSameRun) {
  const auto m = oracle_manifest({4, 4, 4, 4});
  auto cfg = small_training_config();
  cfg.steps = 10;
  cfg.planned_images = 40;
  cfg.checkpoint_every = 5;
  cfg.r1_interval = 3;
  const fs::path full = fs::temp_directory_path() / "scalespace_train_full";
  const fs::path part = fs::temp_directory_path() / "scalespace_train_part";
  fs::remove_all(full);
  fs::remove_all(part);
  std::vector<StepMetrics> full_metrics;
  const auto run = train(cfg, m, full, {std::nullopt, [&](const StepMetrics& s) { full_metrics.push_back(s); }, {}});
  ASSERT_EQ(run.checkpoints.size(), 3u);  // untrained, step 5, step 10
  EXPECT_EQ(run.final_checkpoint.step, 10);

  const auto first = train([&] { auto c = cfg; c.steps = 5; return c; }(), m, part);
  std::vector<StepMetrics> resumed;
  train(cfg, m, part, {first.checkpoints.back(), [&](const StepMetrics& s) { resumed.push_back(s); }, {}});
  ASSERT_EQ(resumed.size(), 5u);
  EXPECT_EQ(resumed.front().step, 6);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(resumed[i].d_loss, full_metrics[5 + i].d_loss, 1e-5);
    EXPECT_NEAR(resumed[i].g_loss, full_metrics[5 + i].g_loss, 1e-5);
  }
  const auto a = load_checkpoint(run.checkpoints.back());
  const auto b = load_checkpoint(checkpoint_stem(part, 10).replace_extension(".json"));
  EXPECT_EQ(a.generator.params(), b.generator.params());

  // Metrics log: one JSON object per step, continuing across the resume.
  std::ifstream log(part / "metrics.jsonl");
  std::string line;
  std::int64_t expect = 1;
  while (std::getline(log, line)) EXPECT_EQ(nlohmann::json::parse(line).get<StepMetrics>().step, expect++);
  EXPECT_EQ(expect, 11);
}

TEST(Train, ConfigJsonRoundTrip) {
  TrainingConfig t;
  t.steps = 77;
  t.consistency.weight = 0.5;
  t.schedule.lambda = 2.0;
  t.mode = ModelMode::kReconstruction;
  t.generator = default_generator_config(testing::toy_config());
  const auto back = nlohmann::json(t).get<TrainingConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(t));
  EXPECT_THROW(nlohmann::json({{"mode", "other"}}).get<TrainingConfig>(), ConfigError);
}

}  // namespace
}  // namespace scalespace
