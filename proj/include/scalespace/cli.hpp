#pragma once

// Command-line front end. Every subcommand resolves its configuration as
// defaults < config file < flags, rejects unknown keys and type mismatches
// (all of them, not just the first), and writes the resolved configuration
// next to its outputs.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "scalespace/checkpoint.hpp"
#include "scalespace/dataset.hpp"
#include "scalespace/evaluation.hpp"
#include "scalespace/oracle.hpp"
#include "scalespace/render.hpp"
#include "scalespace/training.hpp"
#include "scalespace/tile_service.hpp"

namespace scalespace::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

/// Configuration problems gathered across a whole resolution pass.
class ConfigErrors : public ConfigError {
 public:
  explicit ConfigErrors(std::vector<std::string> errors) : ConfigError(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = std::to_string(e.size()) + " configuration error(s):";
    for (const auto& x : e) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> errors_;
};

// ---------------------------------------------------------------------------
// Config resolution

inline std::string type_name(const json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

/// Whether `v` may replace a default of the type of `def`. A null default
/// accepts anything; an integer default requires an integer.
inline bool compatible(const json& def, const json& v) {
  if (def.is_null() || v.is_null()) return true;
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  return type_name(def) == type_name(v);
}

/// Merges `overlay` into `base`, recording unknown keys and type mismatches
/// under their dotted paths. Objects below a null default merge freely.
inline void merge_checked(json& base, const json& overlay, const std::string& path, std::vector<std::string>& errors,
                          const std::string& origin) {
  if (!overlay.is_object()) {
    errors.push_back(origin + ": expected an object" + (path.empty() ? "" : " at '" + path + "'"));
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      errors.push_back(origin + ": unknown key '" + p + "'");
      continue;
    }
    json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      merge_checked(slot, value, p, errors, origin);
    } else if (!compatible(slot, value)) {
      errors.push_back(origin + ": key '" + p + "' expects " + type_name(slot) + ", got " + type_name(value));
    } else {
      slot = value;
    }
  }
}

/// Sets a dotted key from a flag value. Keys whose default is a string take
/// the text verbatim; otherwise values that parse as JSON are taken as JSON
/// and anything else as a string.
inline json overlay_for(const std::string& dotted, const std::string& raw, const json& defaults) {
  std::string pointer = "/" + dotted;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const json::json_pointer ptr(pointer);
  json value;
  if (defaults.contains(ptr) && defaults.at(ptr).is_string()) {
    value = raw;
  } else {
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
  }
  json root = json::object();
  json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  return root;
}

struct FlagValue {
  std::string key;  // dotted config key
  std::string raw;
};

/// defaults < file < flags. `errors` seeds the report so that every problem
/// on the command line is listed together.
inline json resolve_config(json defaults, const std::string& config_file, const std::vector<FlagValue>& flags,
                           std::vector<std::string> errors = {}) {
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) {
      errors.push_back("config file '" + config_file + "' cannot be read");
    } else {
      try {
        merge_checked(defaults, json::parse(in), "", errors, config_file);
      } catch (const json::parse_error& e) {
        errors.push_back(config_file + ": " + e.what());
      }
    }
  }
  for (const auto& f : flags) {
    try {
      merge_checked(defaults, overlay_for(f.key, f.raw, defaults), "", errors, "flag");
    } catch (const json::exception&) {
      errors.push_back("flag: malformed key '" + f.key + "'");
    }
  }
  if (!errors.empty()) throw ConfigErrors(errors);
  return defaults;
}

inline void require(const json& cfg, const std::vector<std::string>& keys) {
  std::vector<std::string> errors;
  for (const auto& k : keys)
    if (cfg.at(k).is_null() || (cfg.at(k).is_string() && cfg.at(k).get<std::string>().empty()))
      errors.push_back("missing required key '" + k + "'");
  if (!errors.empty()) throw ConfigErrors(errors);
}

inline std::string config_hash(const json& cfg) {
  const std::string s = cfg.dump();
  return sha256_hex(s.data(), s.size());
}

inline void write_snapshot(const json& cfg, const fs::path& out, const std::string& command) {
  fs::create_directories(out);
  std::ofstream(out / (command + "_config.json")) << cfg.dump(2) << "\n";
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Shared config pieces

inline json oracle_defaults() {
  const OracleConfig o;
  return {{"seed", o.seed},
          {"octave_gain", o.octave_gain},
          {"kappa", o.kappa},
          {"components_per_octave", o.components_per_octave},
          {"lowest_octave", o.lowest_octave},
          {"field_rms", o.field_rms}};
}

inline ScaleSpaceConfig scale_space_from(const json& c) {
  ScaleSpaceConfig s;
  s.patch_resolution = c.at("patch_resolution").get<int>();
  s.s_max = c.at("s_max").get<double>();
  s.f_min = c.at("f_min").is_null() ? min_frequency_for_patch(s.patch_resolution) : c.at("f_min").get<double>();
  s.validate();
  return s;
}

inline OracleConfig oracle_from(const json& c) {
  OracleConfig o;
  const auto& j = c.at("oracle");
  o.seed = j.at("seed").get<std::uint64_t>();
  o.octave_gain = j.at("octave_gain").get<double>();
  o.kappa = j.at("kappa").get<double>();
  o.components_per_octave = j.at("components_per_octave").get<int>();
  o.lowest_octave = j.at("lowest_octave").get<int>();
  o.field_rms = j.at("field_rms").get<double>();
  o.cfg = scale_space_from(c);
  return o;
}

inline Region region_from(const json& r) {
  if (!r.is_array() || r.size() != 4) throw ConfigError("region must be [x0, y0, x1, y1]");
  Region region{r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()};
  region.validate();
  return region;
}

inline Vec2 vec2_from(const json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 2) throw ConfigError("'" + key + "' must be [x, y]");
  return {v[0].get<double>(), v[1].get<double>()};
}

inline std::vector<double> latent_for(const GeneratorCheckpoint& ck, std::uint64_t seed) {
  return latent_from_seed(ck.mode == ModelMode::kReconstruction ? 0 : seed, ck.config().latent_dim);
}

/// Trajectories (red) and references (green) drawn over the first frame.
inline Image trajectory_figure(const ZoomSequence& seq, const std::vector<Trajectory>& tracks) {
  Image fig = seq.frames.front();
  for (float& v : fig.data) v = 0.35f + 0.3f * v;
  auto plot = [&](Vec2 a, Vec2 b, float r, float g) {
    const int n = static_cast<int>(std::ceil((b - a).norm() * 2)) + 1;
    for (int i = 0; i <= n; ++i) {
      const Vec2 p = a + (static_cast<double>(i) / n) * (b - a);
      const int x = static_cast<int>(std::floor(p.x));
      const int y = static_cast<int>(std::floor(p.y));
      if (x < 0 || y < 0 || x >= fig.width || y >= fig.height) continue;
      fig.at(x, y, 0) = r;
      fig.at(x, y, 1) = g;
      fig.at(x, y, 2) = 0.1f;
    }
  };
  for (const auto& t : tracks) {
    if (t.failed) continue;
    for (std::size_t k = 1; k < t.points.size(); ++k) {
      plot(radial_position(t.points.front(), seq.resolution(), seq.scales.front(), seq.scales[k - 1]),
           radial_position(t.points.front(), seq.resolution(), seq.scales.front(), seq.scales[k]), 0.1f, 0.9f);
      plot(t.points[k - 1], t.points[k], 0.95f, 0.15f);
    }
  }
  return fig;
}

inline FlowConfig flow_from(const json& j) {
  FlowConfig f;
  f.window_radius = j.at("window_radius").get<int>();
  f.levels = j.at("levels").get<int>();
  f.seed_spacing = j.at("seed_spacing").get<int>();
  f.border = j.at("border").get<int>();
  return f;
}

inline json flow_defaults() {
  const FlowConfig f;
  return {{"window_radius", f.window_radius}, {"levels", f.levels}, {"seed_spacing", f.seed_spacing}, {"border", f.border}};
}

// ---------------------------------------------------------------------------
// Subcommands

struct Command {
  std::string name;
  std::string description;
  std::function<json()> defaults;
  std::vector<std::pair<std::string, std::string>> flags;  // flag name -> config key
  std::function<void(const json&, std::ostream&)> run;
};

inline void run_synth_dataset(const json& c, std::ostream& out) {
  const auto ocfg = oracle_from(c);
  ExtractionPlan plan{c.at("counts").get<std::vector<int>>(), c.at("seed").get<std::uint64_t>()};
  auto m = extract_patches(PatchSource::oracle(ocfg), plan, ocfg.cfg);
  if (c.at("label_noise").get<double>() > 0) m = noisy_labels(std::move(m), c.at("label_noise").get<double>(), plan.seed + 1);
  const fs::path dir = c.at("out").get<std::string>();
  save_dataset(m, dir);
  out << "wrote " << m.records.size() << " patches to " << dir.string() << "\n";
}

inline void run_extract(const json& c, std::ostream& out) {
  const auto cfg = scale_space_from(c);
  ExtractionPlan plan{c.at("counts").get<std::vector<int>>(), c.at("seed").get<std::uint64_t>()};
  auto m = extract_patches(PatchSource::image_file(c.at("image").get<std::string>()), plan, cfg);
  if (c.at("label_noise").get<double>() > 0) m = noisy_labels(std::move(m), c.at("label_noise").get<double>(), plan.seed + 1);
  const fs::path dir = c.at("out").get<std::string>();
  save_dataset(m, dir);
  out << "wrote " << m.records.size() << " patches to " << dir.string() << "\n";
}

inline json train_defaults() {
  json j = TrainingConfig();
  j["data"] = "";
  j["out"] = "run";
  j["resume"] = nullptr;
  return j;
}

inline void run_train(const json& c, std::ostream& out) {
  TrainingConfig t;
  json tj = c;
  for (const char* k : {"data", "out", "resume"}) tj.erase(k);
  from_json(tj, t);
  t.validate();
  const auto manifest = load_dataset(c.at("data").get<std::string>());
  TrainHooks hooks;
  if (!c.at("resume").is_null()) hooks.resume = c.at("resume").get<std::string>();
  hooks.on_checkpoint = [&](const fs::path& p, const GeneratorCheckpoint& ck) {
    out << "step " << ck.step << ": " << p.string() << "\n";
  };
  const auto run = train(t, manifest, c.at("out").get<std::string>(), hooks);
  out << "trained " << run.final_checkpoint.step << " steps\n";
}

inline json eval_defaults() {
  return {{"checkpoint", ""},
          {"out", "eval"},
          {"seed", 0},
          {"data", nullptr},
          {"zoom",
           {{"center", {0.0, 0.0}}, {"s_start", 0.0}, {"s_end", 1.0}, {"frames", 11}, {"resolution", 64}, {"flow", flow_defaults()}}},
          {"psnr_inter", {{"scales", {0, 1, 2, 3}}, {"region", {-0.5, -0.5, 0.5, 0.5}}}},
          {"psnr_gt", {{"scale", 2.0}, {"region", {-0.25, -0.25, 0.25, 0.25}}}},
          {"distribution", {{"samples_per_bin", 256}, {"min_samples", 200}}}};
}

inline void run_eval(const json& c, std::ostream& out) {
  const auto ck = load_checkpoint(c.at("checkpoint").get<std::string>());
  const auto& scfg = ck.config().cfg;
  const fs::path dir = c.at("out").get<std::string>();
  const auto z = latent_for(ck, c.at("seed").get<std::uint64_t>());
  json report{{"config_hash", config_hash(c)}, {"model_hash", model_hash(ck)}};

  const auto& zc = c.at("zoom");
  const double s_end = std::min(zc.at("s_end").get<double>(), scfg.s_max);
  const auto seq = zoom_sequence(ck, z, vec2_from(zc.at("center"), "zoom.center"), zc.at("s_start").get<double>(), s_end,
                                 zc.at("frames").get<int>(), zc.at("resolution").get<int>());
  const auto flow = flow_from(zc.at("flow"));
  const auto zoom = evaluate_zoom(seq, flow);
  report["bias"] = zoom.report.bias;
  report["angle"] = zoom.report.angle;
  report["emd"] = zoom.report.emd;
  report["trajectories"] = zoom;
  write_png(dir / "trajectories.png", trajectory_figure(seq, flow_trajectories(seq, flow)));

  std::vector<double> scales;
  for (double s : c.at("psnr_inter").at("scales").get<std::vector<double>>())
    if (s <= scfg.s_max) scales.push_back(s);
  const auto pi = psnr_inter(ck.generator, z, scales, region_from(c.at("psnr_inter").at("region")));
  report["psnr_inter"] = pi.mean;
  report["psnr_inter_pairs"] = pi;

  std::optional<DatasetManifest> manifest;
  if (!c.at("data").is_null()) manifest = load_dataset(c.at("data").get<std::string>());
  if (manifest && manifest->source.type == "oracle") {
    const ProceduralOracle oracle(manifest->source.descriptor.get<OracleConfig>());
    const double s = c.at("psnr_gt").at("scale").get<double>();
    const Region region = region_from(c.at("psnr_gt").at("region"));
    report["psnr_gt"] = psnr_gt_aligned(ck.generator, z, oracle_slice(oracle, s, region), s, region);
  } else {
    report["psnr_gt"] = nullptr;
  }
  if (manifest) {
    DistributionScoreConfig dc;
    dc.samples_per_bin = c.at("distribution").at("samples_per_bin").get<int>();
    dc.min_samples = c.at("distribution").at("min_samples").get<int>();
    dc.mode = ck.mode;
    report["per_bin_scores"] = per_scale_distribution_score(ck.generator, *manifest, dc);
    report["feature_extractor"] = "random projection of multi-scale pixel and gradient statistics (not comparable to FID)";
  } else {
    report["per_bin_scores"] = json::array();
  }
  write_json(dir / "report.json", report);
  out << report.dump(2) << "\n";
}

inline json render_zoom_defaults() {
  return {{"source", "oracle"},
          {"checkpoint", nullptr},
          {"out", "zoom"},
          {"seed", 0},
          {"patch_resolution", 32},
          {"s_max", 4.0},
          {"f_min", nullptr},
          {"oracle", oracle_defaults()},
          {"center", {0.0, 0.0}},
          {"s_start", 1.0},
          {"s_end", 2.0},
          {"frames", 11},
          {"resolution", 64},
          {"flow", flow_defaults()}};
}

inline void run_render_zoom(const json& c, std::ostream& out) {
  const auto source = c.at("source").get<std::string>();
  const Vec2 center = vec2_from(c.at("center"), "center");
  const double s0 = c.at("s_start").get<double>();
  const double s1 = c.at("s_end").get<double>();
  const int frames = c.at("frames").get<int>();
  const int res = c.at("resolution").get<int>();
  ZoomSequence seq;
  if (source == "oracle") {
    seq = zoom_sequence(ProceduralOracle(oracle_from(c)), center, s0, s1, frames, res);
  } else if (source == "checkpoint") {
    require(c, {"checkpoint"});
    const auto ck = load_checkpoint(c.at("checkpoint").get<std::string>());
    seq = zoom_sequence(ck, latent_for(ck, c.at("seed").get<std::uint64_t>()), center, s0, s1, frames, res);
  } else {
    throw ConfigError("key 'source' must be 'oracle' or 'checkpoint', got '" + source + "'");
  }
  const fs::path dir = c.at("out").get<std::string>();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.png", i);
    write_png(dir / name, seq.frames[i]);
  }
  json report{{"scales", seq.scales}, {"config_hash", config_hash(c)}};
  if (seq.frames.size() >= 2) {
    const auto flow = flow_from(c.at("flow"));
    report["trajectories"] = evaluate_zoom(seq, flow);
    write_png(dir / "trajectories.png", trajectory_figure(seq, flow_trajectories(seq, flow)));
  } else {
    report["trajectories"] = nullptr;
    report["note"] = "a single frame has no trajectories";
  }
  write_json(dir / "trajectories.json", report);
  out << "wrote " << seq.frames.size() << " frames to " << dir.string() << "\n";
}

inline json stitch_defaults() {
  return {{"checkpoint", ""},
          {"out", "stitch"},
          {"seed", 0},
          {"scale", 2.0},
          {"region", {-0.5, -0.5, 0.5, 0.5}},
          {"pixel_budget", kDefaultPixelBudget * 16}};
}

inline void run_stitch(const json& c, std::ostream& out) {
  const auto ck = load_checkpoint(c.at("checkpoint").get<std::string>());
  const fs::path dir = c.at("out").get<std::string>();
  const double s = c.at("scale").get<double>();
  if (s < 0 || s > ck.config().cfg.s_max) throw ConfigError("key 'scale' must lie in [0, s_max]");
  const Region region = region_from(c.at("region"));
  write_slice_png(ck.generator, latent_for(ck, c.at("seed").get<std::uint64_t>()), s, region, dir / "slice.png",
                  c.at("pixel_budget").get<long long>());
  const auto w = lattice_window(ck.config().cfg, s, region);
  out << "wrote " << w.nx << "x" << w.ny << " slice to " << (dir / "slice.png").string() << "\n";
}

inline json serve_defaults() {
  const TileServiceConfig t;
  return {{"checkpoint", ""},
          {"out", "."},
          {"seed", 0},
          {"host", "127.0.0.1"},
          {"port", 8080},
          {"cache_capacity", t.cache_capacity},
          {"queue_depth", t.queue_depth}};
}

inline void run_serve(const json& c, std::ostream& out) {
  TileServiceConfig tc;
  tc.cache_capacity = c.at("cache_capacity").get<std::size_t>();
  tc.queue_depth = c.at("queue_depth").get<std::size_t>();
  TileService service(load_checkpoint(c.at("checkpoint").get<std::string>()), tc);
  TileServer server(service);
  const int port = server.bind(c.at("host").get<std::string>(), c.at("port").get<int>());
  out << "serving " << service.model_hash_or_empty() << " on http://" << c.at("host").get<std::string>() << ":" << port
      << std::endl;
  server.listen();
}

inline std::vector<Command> commands() {
  auto dataset_defaults = [](bool image) {
    json j{{"out", "dataset"}, {"seed", 1},           {"patch_resolution", 32}, {"s_max", 4.0},
           {"f_min", nullptr}, {"counts", {2000, 2000, 2000, 2000}}, {"label_noise", 0.0}};
    if (image) j["image"] = "";
    else j["oracle"] = oracle_defaults();
    return j;
  };
  return {
      {"synth-dataset", "Render a patch dataset from the procedural oracle", [=] { return dataset_defaults(false); },
       {{"out", "out"}, {"seed", "seed"}},
       run_synth_dataset},
      {"extract", "Extract a patch dataset from a square PNG", [=] { return dataset_defaults(true); },
       {{"image", "image"}, {"out", "out"}, {"seed", "seed"}},
       [](const json& c, std::ostream& o) {
         require(c, {"image"});
         run_extract(c, o);
       }},
      {"train", "Train a generator on a patch dataset", train_defaults,
       {{"data", "data"}, {"out", "out"}, {"resume", "resume"}, {"steps", "steps"}, {"seed", "seed"}},
       [](const json& c, std::ostream& o) {
         require(c, {"data"});
         run_train(c, o);
       }},
      {"eval", "Scale-consistency and quality metrics of a checkpoint", eval_defaults,
       {{"checkpoint", "checkpoint"}, {"data", "data"}, {"out", "out"}, {"seed", "seed"}},
       [](const json& c, std::ostream& o) {
         require(c, {"checkpoint"});
         run_eval(c, o);
       }},
      {"render-zoom", "Render a zoom sequence and its trajectory report", render_zoom_defaults,
       {{"checkpoint", "checkpoint"}, {"source", "source"}, {"out", "out"}, {"seed", "seed"}},
       run_render_zoom},
      {"stitch", "Render a stitched slice to PNG", stitch_defaults,
       {{"checkpoint", "checkpoint"}, {"out", "out"}, {"scale", "scale"}, {"seed", "seed"}},
       [](const json& c, std::ostream& o) {
         require(c, {"checkpoint"});
         run_stitch(c, o);
       }},
      {"serve", "Serve a checkpoint as an HTTP tile pyramid", serve_defaults,
       {{"checkpoint", "checkpoint"}, {"port", "port"}, {"host", "host"}},
       [](const json& c, std::ostream& o) {
         require(c, {"checkpoint"});
         run_serve(c, o);
       }},
  };
}

/// Runs the command line; never throws.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Continuous scale-space generator toolkit", "scalespace"};
  app.require_subcommand(1);
  const auto cmds = commands();
  struct Parsed {
    std::string config;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;
  };
  std::vector<Parsed> parsed(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].description);
    sub->add_option("--config", parsed[i].config, "JSON config file (overrides defaults)");
    sub->add_option("--set", parsed[i].sets, "Override a config key: key.path=value (repeatable)");
    for (const auto& [flag, key] : cmds[i].flags)
      sub->add_option("--" + flag, parsed[i].flags[flag], "Sets config key '" + key + "'");
    sub->footer("Defaults:\n" + cmds[i].defaults().dump(2));
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const auto& cmd = cmds[i];
    try {
      std::vector<FlagValue> flags;
      for (const auto& [flag, key] : cmd.flags)
        if (subs[i]->count("--" + flag) > 0) flags.push_back({key, parsed[i].flags.at(flag)});
      std::vector<std::string> bad;
      for (const auto& s : parsed[i].sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) bad.push_back("--set '" + s + "' is not key=value");
        else flags.push_back({s.substr(0, eq), s.substr(eq + 1)});
      }
      const json cfg = resolve_config(cmd.defaults(), parsed[i].config, flags, std::move(bad));
      write_snapshot(cfg, cfg.at("out").get<std::string>(), cmd.name);
      cmd.run(cfg, out);
      return kOk;
    } catch (const ConfigError& e) {
      err << "configuration error: " << e.what() << "\n";
      return kConfigError;
    } catch (const json::exception& e) {
      err << "configuration error: " << e.what() << "\n";
      return kConfigError;
    } catch (const DomainError& e) {
      err << "configuration error: " << e.what() << "\n";
      return kConfigError;
    } catch (const DataError& e) {
      err << "data error: " << e.what() << "\n";
      return kDataError;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kRuntimeError;
    }
  }
  return kConfigError;
}

}  // namespace scalespace::cli
