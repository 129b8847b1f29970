#pragma once

// Checkpoint = one little-endian float32 parameter blob + a versioned JSON
// sidecar holding the generator config, the frequency bins (with phases and
// layer assignments) and any named auxiliary tensors (discriminator and
// optimizer state for resuming).

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scalespace/core.hpp"
#include "scalespace/nn/generator.hpp"

namespace scalespace {

inline constexpr int kCheckpointSchemaVersion = 1;

enum class ModelMode { kGenerative, kReconstruction };

inline std::string to_string(ModelMode m) { return m == ModelMode::kGenerative ? "generative" : "reconstruction"; }

inline ModelMode parse_mode(const std::string& s) {
  if (s == "generative") return ModelMode::kGenerative;
  if (s == "reconstruction") return ModelMode::kReconstruction;
  throw ConfigError("mode must be 'generative' or 'reconstruction', got '" + s + "'");
}

struct GeneratorCheckpoint {
  Generator<float> generator;
  std::int64_t step = 0;
  std::int64_t images_seen = 0;
  std::uint64_t seed = 0;
  ModelMode mode = ModelMode::kGenerative;
  std::map<std::string, std::vector<float>> tensors;  // auxiliary state
  nlohmann::json metadata = nlohmann::json::object();

  const GeneratorConfig& config() const { return generator.config(); }
};

inline std::string sha256_hex(const void* data, std::size_t size, const std::string& extra = {}) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, data, size);
  EVP_DigestUpdate(ctx, extra.data(), extra.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// Hash over everything that determines generator outputs.
inline std::string model_hash(const GeneratorCheckpoint& ck) {
  const nlohmann::json j{{"config", ck.config()}, {"bins", ck.generator.bins()}};
  const auto& p = ck.generator.params();
  return sha256_hex(p.data(), p.size() * sizeof(float), j.dump());
}

namespace detail {

inline void write_floats(std::ofstream& out, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

}  // namespace detail

/// Writes <stem>.json and <stem>.bin; returns the JSON path.
inline std::filesystem::path save_checkpoint(const GeneratorCheckpoint& ck, const std::filesystem::path& stem) {
  namespace fs = std::filesystem;
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const fs::path bin = fs::path(stem).concat(".bin");
  const fs::path meta = fs::path(stem).concat(".json");
  nlohmann::json sections = nlohmann::json::object();
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint blob " + bin.string());
  std::uint64_t offset = 0;
  auto put = [&](const std::string& name, const std::vector<float>& v) {
    sections[name] = {{"offset", offset}, {"count", v.size()}};
    detail::write_floats(out, v);
    offset += v.size();
  };
  put("generator", ck.generator.params());
  for (const auto& [name, v] : ck.tensors) put(name, v);
  out.close();
  if (!out) throw DataError("failed writing checkpoint blob " + bin.string());
  const nlohmann::json j{{"schema_version", kCheckpointSchemaVersion},
                         {"generator_config", ck.config()},
                         {"bins", ck.generator.bins()},
                         {"step", ck.step},
                         {"images_seen", ck.images_seen},
                         {"seed", ck.seed},
                         {"mode", to_string(ck.mode)},
                         {"blob", bin.filename().string()},
                         {"sections", sections},
                         {"model_hash", model_hash(ck)},
                         {"metadata", ck.metadata}};
  std::ofstream m(meta);
  if (!m) throw DataError("cannot write checkpoint sidecar " + meta.string());
  m << j.dump(2) << "\n";
  return meta;
}

/// Loads from the JSON sidecar path (or the stem without extension).
inline GeneratorCheckpoint load_checkpoint(std::filesystem::path path) {
  namespace fs = std::filesystem;
  if (path.extension() != ".json") path.concat(".json");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint sidecar " + path.string() + ": " + e.what());
  }
  const int version = j.value("schema_version", 0);
  if (version != kCheckpointSchemaVersion)
    throw DataError("unsupported checkpoint schema version " + std::to_string(version));
  GeneratorCheckpoint ck;
  try {
    ck.generator = Generator<float>(j.at("generator_config").get<GeneratorConfig>(),
                                    j.at("bins").get<std::vector<FrequencyBin>>());
    ck.step = j.at("step").get<std::int64_t>();
    ck.images_seen = j.value("images_seen", std::int64_t{0});
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.mode = parse_mode(j.value("mode", std::string("generative")));
    ck.metadata = j.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint sidecar " + path.string() + " is missing fields: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint sidecar " + path.string() + " holds an invalid config: " + e.what());
  }
  const fs::path bin = path.parent_path() / j.at("blob").get<std::string>();
  std::ifstream blob(bin, std::ios::binary);
  if (!blob) throw DataError("cannot open checkpoint blob " + bin.string());
  std::vector<float> all;
  blob.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(blob.tellg());
  all.assign(bytes / sizeof(float), 0.0f);
  blob.seekg(0);
  blob.read(reinterpret_cast<char*>(all.data()), static_cast<std::streamsize>(bytes));
  for (const auto& [name, sec] : j.at("sections").items()) {
    const auto off = sec.at("offset").get<std::size_t>();
    const auto count = sec.at("count").get<std::size_t>();
    if (off + count > all.size()) throw DataError("checkpoint blob is truncated at section " + name);
    std::vector<float> v(all.begin() + off, all.begin() + off + count);
    if (name == "generator") {
      if (count != ck.generator.param_count()) throw DataError("generator parameter count mismatch");
      ck.generator.params() = std::move(v);
    } else {
      ck.tensors[name] = std::move(v);
    }
  }
  return ck;
}

}  // namespace scalespace
