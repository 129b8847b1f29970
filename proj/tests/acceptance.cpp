// Acceptance suite. Prints one line per criterion A1-A9:
//
//   A<n> PASS|FAIL [seconds] <checks>
//
// and exits nonzero if any check failed, unless the failing check was named
// with --known-unattainable (the line still says FAIL). The same lines are
// written to <work>/acceptance_report.txt.

#include <CLI11.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "scalespace/evaluation.hpp"
#include "scalespace/tile_service.hpp"
#include "test_util.hpp"

namespace {

using namespace scalespace;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Check {
  std::string id;  // e.g. "A7a"
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// A1 formulas

std::vector<Check> formulas() {
  double worst = 0.0;
  auto near = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  ScaleSpaceConfig cfg;  // f_min = 128 / sqrt(2)
  near(scale_of_bandwidth(cfg.f_min, cfg), 0.0);
  near(scale_of_bandwidth(256.0 * cfg.f_min, cfg), 8.0);
  near(scale_of_bandwidth(2.0 * cfg.f_min, cfg), 1.0);
  near(bandwidth_of_scale(0.0, cfg), cfg.f_min);
  for (int i = 0; i <= 1000; ++i) near(scale_of_bandwidth(bandwidth_of_scale(0.01 * i, cfg), cfg), 0.01 * i);
  ScaleSpaceConfig other = cfg;
  other.f_min = 90.51;
  near(bandwidth_of_scale(8.0, other), 23170.56);
  near(transform_coord({0.3, -0.2}, {{0, 0}, 0}).x, 0.3);
  near(transform_coord({0.3, -0.2}, {{0, 0}, 0}).y, -0.2);
  for (double s : {0.0, 1.5, 7.0}) near(transform_coord({0.5, 0.5}, {{0.5, 0.5}, s}).norm(), 0.0);
  near(transform_coord({0.25, 0.0}, {{0, 0}, 1}).x, 0.125);
  const BinningConfig bins;  // delta_s_bin = 3
  for (double s : {0.0, 0.3, 5.0, 8.0}) near(weight_of_bin(0, s, bins), 1.0);
  near(weight_of_bin(1, 2.5, bins), 0.5);
  near(weight_of_bin(2, 5.0, bins), 0.0);

  other.f_min = 1.0;
  const long long n0 = nyquist_resolution(0.0, cfg);
  const long long n8 = nyquist_resolution(8.0, cfg);
  const long long n1 = nyquist_resolution(0.0, other);
  bool errors = false;
  try {
    scale_of_bandwidth(0.5 * cfg.f_min, cfg);
  } catch (const DomainError&) {
    errors = true;
  }
  return {{"A1", worst <= 1e-9 && n0 == 256 && n8 == 65536 && n1 == 3 && errors,
           "max formula error " + fmt(worst) + ", nyquist " + std::to_string(n0) + "/" + std::to_string(n8) + "/" +
               std::to_string(n1) + (errors ? "" : ", below-f_min not rejected")}};
}

// ---------------------------------------------------------------------------
// A2 Beta sampler

std::vector<Check> beta_sampler() {
  double worst_ks = 0.0;
  double worst_mode = 0.0;
  double flatness = 0.0;
  bool support = true;
  for (double s : {1.0, 4.0, 8.0, 16.0}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(s * 101));
    const int n = 1000000;
    std::vector<double> xs(n);
    for (double& x : xs) x = sample_delta_scale(s, rng);
    std::sort(xs.begin(), xs.end());
    support = support && xs.front() >= 0.0 && xs.back() <= s;
    const auto [a, b] = beta_params(s);
    for (int i = 0; i < n; ++i) {
      const double f = boost::math::ibeta(a, b, xs[i] / s);
      worst_ks = std::max({worst_ks, std::abs(f - double(i) / n), std::abs(f - double(i + 1) / n)});
    }
    const double w = 0.05;
    std::vector<double> hist(static_cast<std::size_t>(std::ceil(s / w)), 0.0);
    for (double x : xs) hist[std::min(hist.size() - 1, static_cast<std::size_t>(x / w))] += 1;
    if (s == 1.0) {
      // Beta(1, 1) is flat; every point is a mode.
      const auto [mn, mx] = std::minmax_element(hist.begin(), hist.end());
      flatness = *mx / *mn;
      continue;
    }
    std::size_t best = 0;
    double best_v = -1;
    for (std::size_t i = 2; i + 2 < hist.size(); ++i) {
      const double v = hist[i - 2] + hist[i - 1] + hist[i] + hist[i + 1] + hist[i + 2];
      if (v > best_v) best_v = v, best = i;
    }
    worst_mode = std::max(worst_mode, std::abs((best + 0.5) * w - 1.0));
  }
  return {{"A2", worst_ks < 0.01 && worst_mode <= 0.1 && flatness < 1.05 && support,
           "max KS " + fmt(worst_ks) + ", max |mode - 1| " + fmt(worst_mode) + ", s=1 max/min bin " + fmt(flatness) +
               (support ? ", support in [0, s]" : ", support violated")}};
}

// ---------------------------------------------------------------------------
// A3 Fourier raster

std::vector<Check> fourier_raster() {
  const BinningConfig cfg{2.0, 3.0, 32};
  const std::vector<InjectionLayer> layers{{0, 3.0}, {2, 6.0}, {3, 12.0}};
  const auto bins = build_bins(cfg, 4.0, layers, 3);
  const AxisGrid grid = layer_grid(16, 3);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::uniform_real_distribution<double> su(0.0, 4.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const PatchSpec spec{{u(rng), u(rng)}, su(rng)};
    const Vec2 delta{u(rng) * 0.01, u(rng) * 0.01};
    for (const PatchSpec& q : {spec, PatchSpec{spec.center + delta, spec.scale}})
      for (const auto& layer : layers) {
        const auto m = rasterize_features<double>(bins, layer.layer, q, grid, layer.limit, cfg);
        int row = 0;
        for (const auto& b : bins)
          for (std::size_t j = 0; j < b.frequencies.size(); ++j) {
            if (b.layer_assignment[j] != layer.layer) continue;
            const Vec2 f = b.frequencies[j];
            const double w = f.norm() * std::exp2(-q.scale) > layer.limit ? 0.0 : weight_of_bin(b.index, q.scale, cfg);
            for (std::size_t y = 0; y < grid.ys.size(); ++y)
              for (std::size_t x = 0; x < grid.xs.size(); ++x) {
                const Vec2 local{grid.xs[x], grid.ys[y]};
                const double ref =
                    w * std::sin(2 * std::numbers::pi * f.dot(q.center + std::exp2(-q.scale) * local) + b.phases[j]);
                worst = std::max(worst, std::abs(ref - m(row, y * grid.xs.size() + x)));
              }
            ++row;
          }
      }
  }

  int multi_partial = 0;
  const BinningConfig defaults;
  for (int i = 0; i < 10000; ++i) {
    const double s = 8.0 * i / 9999.0;
    int partial = 0;
    for (int k = 0; k < defaults.bin_count(8.0); ++k) {
      const double w = weight_of_bin(k, s, defaults);
      partial += w > 0.0 && w < 1.0;
    }
    multi_partial += partial > 1;
  }

  // Every frequency of a fully blended bin stays under the Nyquist limit of
  // the layer it is injected at, on the generator plans actually used.
  int violations = 0;
  int checked = 0;
  for (int p : {16, 32, 64, 256})
    for (double s_max : {4.0, 8.0}) {
      const auto g = default_generator_config(ScaleSpaceConfig{min_frequency_for_patch(p), s_max, p});
      const auto lay = g.injection_layers();
      const auto gb = build_bins(g.binning, s_max, lay, 1);
      for (int i = 0; i <= 400; ++i) {
        const double s = s_max * i / 400.0;
        for (const auto& b : gb) {
          if (weight_of_bin(b.index, s, g.binning) < 1.0) continue;
          for (std::size_t j = 0; j < b.frequencies.size(); ++j) {
            double limit = 0.0;
            for (const auto& l : lay)
              if (l.layer == b.layer_assignment[j]) limit = l.limit;
            ++checked;
            violations += b.frequencies[j].norm() * std::exp2(-s) > limit * (1 + 1e-12);
          }
        }
      }
    }
  return {{"A3", worst < 1e-6 && multi_partial == 0 && violations == 0,
           "equivariance max error " + fmt(worst) + ", s-points with >1 partial bin " + std::to_string(multi_partial) +
               "/10000, Nyquist violations " + std::to_string(violations) + "/" + std::to_string(checked)}};
}

// ---------------------------------------------------------------------------
// A4 oracle cross-scale consistency

std::vector<Check> oracle_consistency() {
  const ProceduralOracle oracle(testing::toy_oracle_config());
  const auto& cfg = oracle.config().cfg;
  const int p = cfg.patch_resolution;
  ConsistencyLossConfig loss;
  loss.kernel = oracle.config().matching_kernel();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::ostringstream detail;
  double worst = 0.0;
  for (double ds : {0.5, 1.0, 2.0}) {
    const ConsistencyGeometry geo(p, ds, loss.kernel, p / cfg.f_min);
    std::uniform_real_distribution<double> su(ds, cfg.s_max);
    double w = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vec2 c{u(rng), u(rng)};
      const double s = su(rng);
      const double side = std::exp2(-s) * geo.fine_resolution() / p;
      const Image fine = oracle.sample_region(c, side, s, geo.fine_resolution());
      const Image coarse = oracle_sample_patch({c, s - ds}, p, oracle);
      w = std::max(w, consistency_distance(geo, fine, coarse, loss, GradientRoute::kNone).loss);
    }
    detail << "ds=" << ds << " max residual " << fmt(w) << ", ";
    worst = std::max(worst, w);
  }
  std::uniform_real_distribution<double> su(0.0, cfg.s_max);
  double energy = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Image img = oracle_sample_patch({{u(rng), u(rng)}, su(rng)}, p, oracle);
    energy = std::max(energy, testing::energy_fraction_above(img, cfg.f_min));
  }
  detail << "max energy above cutoff " << fmt(100 * energy) << "%";
  return {{"A4", worst < 0.01 && energy < 0.01, detail.str()}};
}

// ---------------------------------------------------------------------------
// A5 metric stack on analytic oracle zooms

std::vector<Check> metric_stack() {
  const ProceduralOracle oracle(testing::toy_oracle_config());
  double bias = 0.0;
  double angle = 0.0;
  double emd = 0.0;
  int tracked = 0;
  struct Case {
    Vec2 center;
    double s0;
  };
  const std::vector<Case> cases{{{0.0, 0.0}, 1.0}, {{0.12, -0.07}, 1.0}, {{-0.2, 0.15}, 0.0}, {{0.05, 0.21}, 2.0}};
  for (const auto& c : cases) {
    const auto r = evaluate_zoom(zoom_sequence(oracle, c.center, c.s0, c.s0 + 1.0, 11, 64));
    bias = std::max(bias, r.report.bias);
    angle = std::max(angle, r.report.angle);
    emd = std::max(emd, r.report.emd);
    tracked += r.tracked;
  }
  // Reference against itself.
  const auto seq = zoom_sequence(oracle, {0.1, 0.1}, 1.0, 2.0, 11, 64);
  const auto ref = reference_trajectories(seq, flow_trajectories(seq));
  const auto self = trajectory_metrics(ref, ref);
  const bool zero = self.bias == 0.0 && self.angle == 0.0 && self.emd == 0.0;
  return {{"A5", bias < 0.1 && angle < 2.0 && emd < 0.5 && zero,
           "worst of " + std::to_string(cases.size()) + " sequences: bias " + fmt(bias) + " px, angle " + fmt(angle) +
               " deg, emd " + fmt(emd) + " px (" + std::to_string(tracked) + " trajectories); reference vs itself (" +
               fmt(self.bias) + ", " + fmt(self.angle) + ", " + fmt(self.emd) + ")"}};
}

// ---------------------------------------------------------------------------
// A6 generator gradients

std::vector<Check> gradient_check() {
  GeneratorConfig cfg = default_generator_config(testing::toy_config(16, 4.0), 8);
  cfg.latent_dim = 8;
  cfg.style_dim = 8;
  auto g = Generator<double>::create(cfg, 11);
  const auto z = latent_from_seed(3, cfg.latent_dim);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  double worst = 0.0;
  for (const PatchSpec spec : {PatchSpec{{0.1, -0.1}, 2.6}, PatchSpec{{-0.2, 0.3}, 0.4}, PatchSpec{{0.0, 0.05}, 3.9}}) {
    const int margin = 2;
    const int side = 16 + 2 * margin;
    const Eigen::MatrixXd probe = Eigen::MatrixXd::NullaryExpr(3, side * side, [&] { return n(rng); });
    auto loss = [&] { return (g.synthesize(z, spec, margin).array() * probe.array()).sum(); };
    Generator<double>::Cache cache;
    g.synthesize(z, spec, margin, &cache);
    std::vector<double> grad;
    g.backward(cache, probe, grad);
    std::uniform_int_distribution<std::size_t> pick(0, g.param_count() - 1);
    double num = 0, den = 0;
    for (int i = 0; i < 300; ++i) {
      const std::size_t k = pick(rng);
      const double orig = g.params()[k];
      // Leaky-ReLU kinks sit within 1e-5 of some pre-activations, where a
      // central difference averages two slopes; 1e-7 steps past them.
      const double h = 1e-7;
      g.params()[k] = orig + h;
      const double lp = loss();
      g.params()[k] = orig - h;
      const double lm = loss();
      g.params()[k] = orig;
      const double fd = (lp - lm) / (2 * h);
      num += (fd - grad[k]) * (fd - grad[k]);
      den += fd * fd;
    }
    worst = std::max(worst, std::sqrt(num / den));
  }
  return {{"A6", worst < 1e-3, "relative error " + fmt(worst) + " over 900 sampled parameters, p=16"}};
}

// ---------------------------------------------------------------------------
// A7 desk-scale training

struct DeskRun {
  fs::path dir;
  std::vector<fs::path> checkpoints;  // step 0 first
  std::vector<StepMetrics> log;
  DatasetManifest manifest;
  TrainingConfig config;
};

OracleConfig desk_oracle() {
  OracleConfig o;
  o.cfg = testing::toy_config(32, 4.0);
  return o;
}

DeskRun desk_training(const fs::path& work, std::int64_t steps) {
  DeskRun run;
  run.dir = work / "desk";
  fs::remove_all(run.dir);
  const auto oracle = desk_oracle();
  run.manifest = extract_patches(PatchSource::oracle(oracle), {{2000, 2000, 2000, 2000}, 1}, oracle.cfg);
  run.config.steps = steps;
  run.config.checkpoint_every = std::max<std::int64_t>(1, steps / 6);
  const auto t0 = Clock::now();
  const auto result = train(run.config, run.manifest, run.dir, {std::nullopt, [&](const StepMetrics& m) {
                              run.log.push_back(m);
                              if (m.step % 250 == 0)
                                std::cerr << "  training step " << m.step << "/" << steps << " (" << fmt(seconds_since(t0), 3)
                                          << " s)\n";
                            }, {}});
  run.checkpoints = result.checkpoints;
  return run;
}

double mean_consistency(const std::vector<StepMetrics>& log, std::int64_t first, std::int64_t last) {
  double sum = 0.0;
  int n = 0;
  for (const auto& m : log)
    if (m.step >= first && m.step <= last) sum += m.consistency, ++n;
  return sum / std::max(1, n);
}

// Consistency of one generator on fixed (z, c, s, ds) probes; unlike the
// training log this does not move with the bin schedule.
double probe_consistency(const Generator<float>& g, const ConsistencyLossConfig& cfg) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, g.config().cfg.s_max);
  double sum = 0.0;
  int n = 0;
  while (n < 128) {
    const double s = u(rng);
    const double ds = sample_delta_scale(s, rng);
    const auto z = latent_from_seed(rng(), g.config().latent_dim);
    const PatchSpec spec{sample_inside_center(s, rng), s};
    if (ds <= 0) continue;
    const auto e = consistency_loss(g, z, spec, ds, cfg, GradientRoute::kNone);
    if (e.skipped) continue;
    sum += e.loss;
    ++n;
  }
  return sum / n;
}

std::int64_t step_of(const fs::path& ck) { return load_checkpoint(ck).step; }

std::vector<Check> desk_scale(const DeskRun& run, const fs::path& work, std::int64_t small_steps) {
  std::vector<Check> out;
  const std::int64_t steps = run.config.steps;

  // (a) From the training log: mean over the first 500 steps against the
  // mean over the last 500.
  {
    const std::int64_t window = std::min<std::int64_t>(500, steps / 2);
    const double early = mean_consistency(run.log, 1, window);
    const double late = mean_consistency(run.log, steps - window + 1, steps);
    const double drop = 1.0 - late / early;
    std::string detail = "training-log consistency " + fmt(early) + " (steps 1-" + std::to_string(window) + ") -> " +
                         fmt(late) + " (last " + std::to_string(window) + "), drop " + fmt(100 * drop, 3) + "%";
    // Diagnostic only: the same comparison on fixed probes, step-500
    // checkpoint against the final one.
    for (const auto& ck : run.checkpoints)
      if (step_of(ck) >= window) {
        const double a = probe_consistency(load_checkpoint(ck).generator, run.config.consistency);
        const double b = probe_consistency(load_checkpoint(run.checkpoints.back()).generator, run.config.consistency);
        detail += "; fixed probes " + fmt(a) + " (step " + std::to_string(step_of(ck)) + ") -> " + fmt(b) + ", drop " +
                  fmt(100 * (1 - b / a), 3) + "%";
        break;
      }
    out.push_back({"A7a", drop >= 0.5, detail});
  }

  // (b) PSNR_inter, final against untrained.
  const auto untrained = load_checkpoint(run.checkpoints.front());
  const auto final_ck = load_checkpoint(run.checkpoints.back());
  {
    const auto z = latent_from_seed(0, final_ck.config().latent_dim);
    const double a = psnr_inter(untrained.generator, z, {0, 1, 2, 3}).mean;
    const double b = psnr_inter(final_ck.generator, z, {0, 1, 2, 3}).mean;
    out.push_back({"A7b", b - a >= 5.0, "PSNR_inter " + fmt(a) + " dB -> " + fmt(b) + " dB (+" + fmt(b - a, 3) + ")"});
  }

  // (c) Per-bin distribution score. Monotonicity is judged on three
  // evenly spaced checkpoints (first, middle, last); all are reported.
  {
    std::vector<std::vector<double>> scores;  // [checkpoint][bin]
    std::vector<std::int64_t> ck_steps;
    std::ostringstream table;
    for (const auto& path : run.checkpoints) {
      const auto ck = load_checkpoint(path);
      const auto bins = per_scale_distribution_score(ck.generator, run.manifest);
      std::vector<double> row;
      for (const auto& b : bins) row.push_back(b.score.value_or(std::nan("")));
      scores.push_back(row);
      ck_steps.push_back(ck.step);
      table << " " << ck.step << ":[";
      for (std::size_t b = 0; b < row.size(); ++b) table << (b ? " " : "") << fmt(row[b], 3);
      table << "]";
    }
    const std::size_t mid = (scores.size() - 1) / 2;
    const std::vector<std::size_t> picked{0, mid, scores.size() - 1};
    int monotone = 0;
    const std::size_t nbins = scores.front().size();
    for (std::size_t b = 0; b < nbins; ++b) {
      bool dec = true;
      for (std::size_t i = 1; i < picked.size(); ++i) dec = dec && scores[picked[i]][b] < scores[picked[i - 1]][b];
      monotone += dec;
    }
    out.push_back({"A7c", picked.size() >= 3 && monotone >= 3,
                   std::to_string(monotone) + "/" + std::to_string(nbins) + " bins decreasing over steps " +
                       std::to_string(ck_steps[picked[0]]) + "," + std::to_string(ck_steps[picked[1]]) + "," +
                       std::to_string(ck_steps[picked[2]]) + "; scores" + table.str()});
  }

  // (d) 250 patches.
  {
    const auto oracle = desk_oracle();
    const auto small = extract_patches(PatchSource::oracle(oracle), {{63, 63, 62, 62}, 2}, oracle.cfg);
    TrainingConfig cfg = run.config;
    cfg.steps = small_steps;
    cfg.checkpoint_every = small_steps;
    const fs::path dir = work / "small";
    fs::remove_all(dir);
    bool finite = true;
    std::string why;
    double gain = 0.0;
    try {
      const auto r = train(cfg, small, dir, {std::nullopt, [&](const StepMetrics& m) {
                             finite = finite && std::isfinite(m.d_loss) && std::isfinite(m.g_loss);
                           }, {}});
      const auto z = latent_from_seed(0, r.final_checkpoint.config().latent_dim);
      gain = psnr_inter(r.final_checkpoint.generator, z, {0, 1, 2, 3}).mean -
             psnr_inter(load_checkpoint(r.checkpoints.front()).generator, z, {0, 1, 2, 3}).mean;
    } catch (const TrainingDiverged& e) {
      why = std::string("divergence guard fired: ") + e.what();
    }
    const bool ok = why.empty() && finite;
    out.push_back({"A7d", ok,
                   ok ? std::to_string(small.records.size()) + " patches, " + std::to_string(small_steps) +
                            " steps without the divergence guard; PSNR_inter +" + fmt(gain, 3) + " dB"
                      : (why.empty() ? "non-finite losses" : why.substr(0, 200))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// A8 stitching

std::vector<Check> stitching(const GeneratorCheckpoint& ck) {
  const auto z = latent_from_seed(0, ck.config().latent_dim);
  const int p = ck.config().cfg.patch_resolution;
  bool ok = true;
  std::ostringstream detail;
  for (int s = 0; s <= static_cast<int>(std::floor(ck.config().cfg.s_max)); ++s) {
    const auto r = seam_report(generate_slice(ck.generator, z, s, Region{}), p);
    ok = ok && r.ok();
    detail << (s ? ", " : "") << "s=" << s << " seam " << fmt(r.max_seam, 3) << " / interior median "
           << fmt(r.median_interior, 3);
  }
  return {{"A8", ok, detail.str()}};
}

// ---------------------------------------------------------------------------
// A9 tile service

std::string tile_url(const std::string& latent, int z, int x, int y) {
  return "/tile/" + latent + "/" + std::to_string(z) + "/" + std::to_string(x) + "/" + std::to_string(y) + ".png";
}

std::vector<Check> tile_service(const GeneratorCheckpoint& ck) {
  std::vector<Check> out;
  {
    TileService service(ck);
    const auto z = latent_from_seed(0, ck.config().latent_dim);
    const int p = ck.config().cfg.patch_resolution;
    double worst = 0.0;
    int tiles = 0;
    for (int level = 0; level <= 3; ++level) {
      const Image slice = generate_slice(ck.generator, z, level, Region{});
      for (int ty = 0; ty < (1 << level); ++ty)
        for (int tx = 0; tx < (1 << level); ++tx) {
          Image crop = slice.crop(tx * p, ty * p, p, p);
          crop.clamp01();
          worst = std::max(worst, max_abs_diff(decode_png(service.tile({"0", level, tx, ty}).body), crop));
          ++tiles;
        }
    }
    out.push_back({"A9a", worst < 1.0 / 255.0,
                   "tile/crop max abs diff " + fmt(worst) + " over " + std::to_string(tiles) + " tiles"});
  }
  {
    TileService service(ck, TileServiceConfig{0, 64});
    TileServer server(service);
    server.bind("127.0.0.1", 0);
    server.start_background();
    std::vector<std::string> bodies(64);
    std::vector<std::thread> pool;
    for (int i = 0; i < 64; ++i)
      pool.emplace_back([&, i] {
        httplib::Client c("127.0.0.1", server.port());
        c.set_read_timeout(60);
        if (const auto r = c.Get(tile_url("0", 3, 5, 2)); r && r->status == 200) bodies[i] = r->body;
      });
    for (auto& t : pool) t.join();
    int same = 0;
    for (const auto& b : bodies) same += !b.empty() && b == bodies[0];
    out.push_back({"A9b", same == 64, std::to_string(same) + "/64 concurrent responses byte-identical"});
  }
  {
    // Latency at p=64, s_max=4 through HTTP, every request a cache miss.
    const GeneratorCheckpoint big{
        Generator<float>::create(default_generator_config(ScaleSpaceConfig{min_frequency_for_patch(64), 4.0, 64}), 5)};
    TileService service(big);
    TileServer server(service);
    server.bind("127.0.0.1", 0);
    server.start_background();
    httplib::Client c("127.0.0.1", server.port());
    std::vector<double> ms;
    for (int i = 0; i < 8; ++i) {
      const auto t0 = Clock::now();
      const auto r = c.Get(tile_url("0", 4, 3 * i % 16, (5 * i + 1) % 16));
      ms.push_back(1000 * seconds_since(t0));
      if (!r || r->status != 200) ms.back() = std::numeric_limits<double>::infinity();
    }
    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    out.push_back({"A9c", sorted.back() < 500.0,
                   "cold tile latency at p=64: max " + fmt(sorted.back(), 3) + " ms, median " + fmt(sorted[4], 3) + " ms"});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite (A1-A9)"};
  std::string work = (fs::temp_directory_path() / "scalespace_acceptance").string();
  std::int64_t steps = 3000;
  std::int64_t small_steps = 1000;
  std::vector<std::string> known;
  std::vector<std::string> only;
  app.add_option("--work", work, "Directory for training runs");
  app.add_option("--steps", steps, "Desk-scale training steps")->check(CLI::PositiveNumber);
  app.add_option("--small-steps", small_steps, "Training steps for the 250-patch run")->check(CLI::PositiveNumber);
  app.add_option("--known-unattainable", known, "Checks (e.g. A7a) whose failure does not fail the run");
  app.add_option("--only", only, "Run only these criteria (e.g. A1 A5)");
  CLI11_PARSE(app, argc, argv);

  const std::set<std::string> known_set(known.begin(), known.end());
  const std::set<std::string> only_set(only.begin(), only.end());
  auto wanted = [&](const std::string& id) { return only_set.empty() || only_set.count(id); };

  struct Criterion {
    std::string id;
    std::string title;
    double limit_seconds;  // 0: no limit
    std::function<std::vector<Check>()> run;
  };
  std::optional<DeskRun> desk;
  auto desk_run = [&]() -> const DeskRun& {
    if (!desk) desk = desk_training(work, steps);
    return *desk;
  };
  auto desk_final = [&] { return load_checkpoint(desk_run().checkpoints.back()); };
  const std::vector<Criterion> criteria{
      {"A1", "formula suite", 1, formulas},
      {"A2", "Beta sampler", 60, beta_sampler},
      {"A3", "Fourier raster", 30, fourier_raster},
      {"A4", "oracle cross-scale", 120, oracle_consistency},
      {"A5", "metric stack", 300, metric_stack},
      {"A6", "gradient check", 120, gradient_check},
      {"A7", "desk-scale training", 4 * 3600, [&] { return desk_scale(desk_run(), work, small_steps); }},
      {"A8", "stitching", 0, [&] { return stitching(desk_final()); }},
      {"A9", "tile service", 0, [&] { return tile_service(desk_final()); }},
  };

  fs::create_directories(work);
  std::ofstream report(fs::path(work) / "acceptance_report.txt");
  int unexpected = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    const auto t0 = Clock::now();
    std::vector<Check> checks;
    try {
      checks = c.run();
    } catch (const std::exception& e) {
      checks = {{c.id, false, std::string("exception: ") + e.what()}};
    }
    const double secs = seconds_since(t0);
    if (c.limit_seconds > 0 && secs > c.limit_seconds)
      checks.push_back({c.id + "-runtime", false, "runtime " + fmt(secs, 3) + " s exceeds " + fmt(c.limit_seconds) + " s"});
    bool pass = true;
    std::ostringstream line;
    for (const auto& ch : checks) {
      pass = pass && ch.pass;
      if (!ch.pass && !known_set.count(ch.id)) ++unexpected;
      line << " | ";
      if (checks.size() > 1) line << ch.id << " " << (ch.pass ? "pass" : known_set.count(ch.id) ? "fail (known)" : "fail") << ": ";
      line << ch.detail;
    }
    std::ostringstream full;
    full << c.id << " " << (pass ? "PASS" : "FAIL") << " [" << std::fixed << std::setprecision(1) << secs << " s] "
         << std::defaultfloat << c.title << line.str() << "\n";
    std::cout << full.str() << std::flush;
    report << full.str() << std::flush;
  }
  if (unexpected > 0) {
    std::cout << unexpected << " unexpected failure(s)\n";
    report << unexpected << " unexpected failure(s)\n";
  }
  return unexpected == 0 ? 0 : 1;
}
