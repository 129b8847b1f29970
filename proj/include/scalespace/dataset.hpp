#pragma once

// Unstructured multiscale patch datasets. Records carry a coarse scale label
// and bin; the true patch center is kept only in an evaluation sidecar and
// never reaches the training view.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scalespace/core.hpp"
#include "scalespace/image.hpp"
#include "scalespace/oracle.hpp"
#include "scalespace/resample.hpp"

namespace scalespace {

struct PatchRecord {
  std::string id;
  std::string file;
  Image image;
  double scale_label = 0.0;
  int scale_bin = 0;
  std::optional<Vec2> hidden_center;
};

struct DatasetSource {
  std::string type;  // "oracle" or "image"
  nlohmann::json descriptor = nlohmann::json::object();
};

struct DatasetManifest {
  ScaleSpaceConfig cfg;
  std::vector<PatchRecord> records;
  std::vector<int> counts;
  DatasetSource source;

  /// Bin of a label; labels equal to s_max fall into the last bin.
  int bin_of(double label) const {
    return std::clamp(static_cast<int>(std::floor(label)), 0, cfg.bin_count() - 1);
  }

  void recount() {
    counts.assign(cfg.bin_count(), 0);
    for (auto& r : records) {
      r.scale_bin = bin_of(r.scale_label);
      ++counts[r.scale_bin];
    }
  }

  void validate() const {
    cfg.validate();
    std::vector<int> c(cfg.bin_count(), 0);
    for (const auto& r : records) {
      if (r.scale_label < 0.0 || r.scale_label > cfg.s_max) throw DataError("record " + r.id + " has a label outside [0, s_max]");
      if (r.scale_bin != bin_of(r.scale_label)) throw DataError("record " + r.id + " has an inconsistent scale bin");
      ++c[r.scale_bin];
    }
    if (c != counts) throw DataError("manifest counts disagree with its records");
  }
};

/// Requested number of patches per unit-width scale bin.
struct ExtractionPlan {
  std::vector<int> counts;
  std::uint64_t seed = 0;
};

inline ExtractionPlan milkyway_plan() { return {{500, 1500, 4000, 30000, 30000, 30000}, 0}; }

/// Box-filtered mip pyramid; level l has pixels 2^l source pixels wide.
class MipPyramid {
 public:
  explicit MipPyramid(Image base) {
    if (base.empty()) throw DataError("empty source image");
    levels_.push_back(std::move(base));
    while (levels_.back().width > 1 || levels_.back().height > 1) levels_.push_back(box_half(levels_.back()));
  }
  int width() const { return levels_.front().width; }
  int height() const { return levels_.front().height; }
  const Image& level(int l) const { return levels_.at(l); }
  int level_count() const { return static_cast<int>(levels_.size()); }

  /// Area-filtered p x p resampling of the source square with top-left
  /// corner (x0, y0) and side `side` (source pixels).
  Image sample(double x0, double y0, double side, int p) const {
    const double pitch = side / p;
    // Two levels finer than the pitch keeps block-alignment error small.
    const int l = std::clamp(static_cast<int>(std::floor(std::log2(std::max(1.0, pitch)))) - 2, 0, level_count() - 1);
    const double k = std::exp2(l);
    return area_resample(levels_[l], x0 / k, y0 / k, pitch / k, p, p);
  }

 private:
  std::vector<Image> levels_;
};

/// A patch source: the oracle, or a square image covering the unit extent.
class PatchSource {
 public:
  static PatchSource oracle(const OracleConfig& cfg) {
    PatchSource s;
    s.oracle_.emplace(cfg);
    s.descriptor_ = {"oracle", nlohmann::json(cfg)};
    return s;
  }

  static PatchSource image(Image img, const std::string& name) {
    if (img.width != img.height) throw DataError("image sources must be square (got " + std::to_string(img.width) + "x" +
                                                 std::to_string(img.height) + ")");
    PatchSource s;
    s.descriptor_ = {"image", {{"path", name}, {"resolution", img.width}}};
    s.pyramid_.emplace(std::move(img));
    return s;
  }

  static PatchSource image_file(const std::filesystem::path& path) { return image(read_png(path), path.string()); }

  bool is_oracle() const { return oracle_.has_value(); }
  const DatasetSource& descriptor() const { return descriptor_; }
  const ProceduralOracle& oracle_ref() const { return *oracle_; }
  const MipPyramid& pyramid() const { return *pyramid_; }

  /// Finest scale whose p-pixel patches still have at least one source
  /// pixel per patch pixel (infinite for the oracle).
  double detail_scale(int p) const {
    if (is_oracle()) return std::numeric_limits<double>::infinity();
    return std::log2(static_cast<double>(pyramid_->width()) / p);
  }

  Image render(const PatchSpec& spec, int p) const {
    if (is_oracle()) return oracle_sample_patch(spec, p, *oracle_);
    const double W = pyramid_->width();
    const double side = std::exp2(-spec.scale) * W;
    return pyramid_->sample((spec.center.x + 0.5) * W - side / 2, (spec.center.y + 0.5) * W - side / 2, side, p);
  }

 private:
  std::optional<ProceduralOracle> oracle_;
  std::optional<MipPyramid> pyramid_;
  DatasetSource descriptor_;
};

/// Uniform center with the footprint fully inside the unit square.
inline Vec2 sample_inside_center(double s, std::mt19937_64& rng) {
  const double half = 0.5 - 0.5 * std::exp2(-s);
  std::uniform_real_distribution<double> u(-half, half);
  const double x = u(rng);
  return {x, u(rng)};
}

/// Renders every planned patch. Image sources must resolve each bin's top
/// scale; a shortfall of up to one octave is accepted with a warning.
inline DatasetManifest extract_patches(const PatchSource& source, const ExtractionPlan& plan, const ScaleSpaceConfig& cfg,
                                       std::ostream* warnings = &std::cerr) {
  cfg.validate();
  const int K = cfg.bin_count();
  if (static_cast<int>(plan.counts.size()) > K)
    throw ConfigError("plan lists " + std::to_string(plan.counts.size()) + " bins but s_max allows " + std::to_string(K));
  const int p = cfg.patch_resolution;
  const double detail = source.detail_scale(p);
  std::vector<int> offending;
  for (std::size_t b = 0; b < plan.counts.size(); ++b) {
    if (plan.counts[b] < 0) throw ConfigError("plan count for bin " + std::to_string(b) + " is negative");
    if (plan.counts[b] == 0) continue;
    const double top = std::min<double>(b + 1.0, cfg.s_max);
    if (top > detail + 1.0 + 1e-9) offending.push_back(static_cast<int>(b));
    else if (top > detail + 1e-9 && warnings)
      *warnings << "warning: bin " << b << " exceeds the source detail by up to "
                << std::setprecision(3) << top - detail << " octaves\n";
  }
  if (!offending.empty()) {
    std::string list;
    for (int b : offending) list += (list.empty() ? "" : ", ") + std::to_string(b);
    throw DataError("source resolution too low for requested bins: " + list);
  }
  DatasetManifest m;
  m.cfg = cfg;
  m.source = source.descriptor();
  std::mt19937_64 rng(plan.seed);
  int next = 0;
  for (std::size_t b = 0; b < plan.counts.size(); ++b) {
    const double lo = static_cast<double>(b);
    const double hi = std::min(lo + 1.0, cfg.s_max);
    std::uniform_real_distribution<double> su(lo, hi);
    for (int i = 0; i < plan.counts[b]; ++i) {
      PatchRecord r;
      const double s = su(rng);
      const Vec2 c = sample_inside_center(s, rng);
      std::ostringstream id;
      id << std::setw(7) << std::setfill('0') << next++;
      r.id = id.str();
      r.file = "patches/" + r.id + ".png";
      r.image = source.render({c, s}, p);
      r.scale_label = s;
      r.hidden_center = c;
      m.records.push_back(std::move(r));
    }
  }
  m.recount();
  return m;
}

/// Perturbs labels by U(-w/2, w/2), clamps to [0, s_max] and re-bins.
inline DatasetManifest noisy_labels(DatasetManifest m, double noise_width, std::uint64_t seed) {
  if (noise_width < 0.0) throw ConfigError("noise width must be non-negative");
  if (noise_width == 0.0) return m;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-noise_width / 2, noise_width / 2);
  for (auto& r : m.records) r.scale_label = std::clamp(r.scale_label + u(rng), 0.0, m.cfg.s_max);
  m.recount();
  return m;
}

/// Expected number of patches covering a point when n patches have scales
/// uniform in [b, b + 1): n * E[4^-s] = n (4^-b - 4^-(b+1)) / ln 4.
inline double expected_density(double n, int b) {
  return n * (std::pow(4.0, -b) - std::pow(4.0, -(b + 1))) / std::log(4.0);
}

struct DatasetStats {
  std::vector<int> counts;
  std::vector<double> density;  // sum of footprint areas 4^-label per bin
};

inline DatasetStats dataset_stats(const DatasetManifest& m) {
  DatasetStats st;
  st.counts.assign(m.cfg.bin_count(), 0);
  st.density.assign(m.cfg.bin_count(), 0.0);
  for (const auto& r : m.records) {
    ++st.counts[r.scale_bin];
    st.density[r.scale_bin] += std::pow(4.0, -r.scale_label);
  }
  return st;
}

inline void save_dataset(const DatasetManifest& m, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  m.validate();
  fs::create_directories(dir / "patches");
  nlohmann::json records = nlohmann::json::array();
  nlohmann::json centers = nlohmann::json::object();
  for (const auto& r : m.records) {
    write_png(dir / r.file, r.image, 16);
    records.push_back({{"id", r.id}, {"file", r.file}, {"scale_label", r.scale_label}, {"scale_bin", r.scale_bin}});
    if (r.hidden_center) centers[r.id] = {r.hidden_center->x, r.hidden_center->y};
  }
  const nlohmann::json j{{"config", m.cfg},
                         {"records", records},
                         {"source", {{"type", m.source.type}, {"descriptor", m.source.descriptor}}},
                         {"counts", m.counts}};
  std::ofstream(dir / "manifest.json") << j.dump(1) << "\n";
  std::ofstream(dir / "eval_centers.json") << centers.dump(1) << "\n";
}

/// Loads manifest and images. Hidden centers are attached only when
/// with_centers is set (evaluation tooling).
inline DatasetManifest load_dataset(const std::filesystem::path& dir, bool with_centers = false) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.cfg = j.at("config").get<ScaleSpaceConfig>();
    m.source.type = j.at("source").at("type").get<std::string>();
    m.source.descriptor = j.at("source").value("descriptor", nlohmann::json::object());
    m.counts = j.at("counts").get<std::vector<int>>();
    for (const auto& jr : j.at("records")) {
      PatchRecord r;
      r.id = jr.at("id").get<std::string>();
      r.file = jr.at("file").get<std::string>();
      r.scale_label = jr.at("scale_label").get<double>();
      r.scale_bin = jr.at("scale_bin").get<int>();
      r.image = read_png(dir / r.file);
      if (r.image.width != m.cfg.patch_resolution || r.image.height != m.cfg.patch_resolution)
        throw DataError("patch " + r.file + " does not match the patch resolution");
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest is missing fields: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("manifest holds an invalid config: ") + e.what());
  }
  if (with_centers) {
    std::ifstream cin(dir / "eval_centers.json");
    if (cin) {
      nlohmann::json c;
      cin >> c;
      for (auto& r : m.records)
        if (c.contains(r.id)) r.hidden_center = Vec2{c[r.id][0].get<double>(), c[r.id][1].get<double>()};
    }
  }
  m.validate();
  return m;
}

/// Center-free view used by training: images with coarse labels and bins.
class TrainingView {
 public:
  struct Item {
    const Image* image;
    double scale_label;
    int scale_bin;
  };

  explicit TrainingView(const DatasetManifest& m) : cfg_(m.cfg), by_bin_(m.cfg.bin_count()) {
    for (const auto& r : m.records) {
      items_.push_back({&r.image, r.scale_label, r.scale_bin});
      by_bin_[r.scale_bin].push_back(items_.size() - 1);
    }
  }

  const ScaleSpaceConfig& config() const { return cfg_; }
  std::size_t size() const { return items_.size(); }
  int bin_count() const { return static_cast<int>(by_bin_.size()); }
  std::size_t bin_size(int b) const { return by_bin_.at(b).size(); }
  const Item& item(std::size_t i) const { return items_.at(i); }

  const Item& sample_from_bin(int b, std::mt19937_64& rng) const {
    const auto& ids = by_bin_.at(b);
    if (ids.empty()) throw DataError("scale bin " + std::to_string(b) + " is empty");
    std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
    return items_[ids[pick(rng)]];
  }

 private:
  ScaleSpaceConfig cfg_;
  std::vector<Item> items_;
  std::vector<std::vector<std::size_t>> by_bin_;
};

}  // namespace scalespace
