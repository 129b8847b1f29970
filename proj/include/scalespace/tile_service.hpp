#pragma once

// Slippy-map style tile pyramid over a generator checkpoint, plus its HTTP
// front end. Tile (z, x, y) is the (x, y) crop of the slice at scale z, one
// patch-resolution square per tile, so tiles reproduce generate_slice
// exactly. Inference runs on a single worker fed by a bounded FIFO queue;
// HTTP handlers only wait on it.

#include <condition_variable>
#include <deque>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>

#include "scalespace/checkpoint.hpp"
#include "scalespace/image.hpp"
#include "scalespace/render.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a macro `_res`
// that collides with Eigen parameter names.
#include <httplib.h>

namespace scalespace {

struct TileAddress {
  std::string latent;
  int z = 0;
  long long x = 0;
  long long y = 0;
};

struct TileServiceConfig {
  std::size_t cache_capacity = 512;  // tiles; 0 disables the cache
  std::size_t queue_depth = 64;      // pending inference jobs before 503
};

/// Synchronized least-recently-used map.
template <typename V>
class LruCache {
 public:
  explicit LruCache(std::size_t capacity) : capacity_(capacity) {}

  std::optional<V> get(const std::string& key) {
    std::lock_guard lock(mu_);
    const auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
  }

  void put(const std::string& key, V value) {
    if (capacity_ == 0) return;
    std::lock_guard lock(mu_);
    if (const auto it = index_.find(key); it != index_.end()) {
      it->second->second = std::move(value);
      order_.splice(order_.begin(), order_, it->second);
      return;
    }
    order_.emplace_front(key, std::move(value));
    index_[key] = order_.begin();
    if (order_.size() > capacity_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return order_.size();
  }

  void clear() {
    std::lock_guard lock(mu_);
    order_.clear();
    index_.clear();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::list<std::pair<std::string, V>> order_;
  std::unordered_map<std::string, typename std::list<std::pair<std::string, V>>::iterator> index_;
};

/// Outcome of a service call, shaped after HTTP.
struct TileResponse {
  int status = 200;
  std::string body;
  std::string content_type = "image/png";
  std::string model_hash;  // of the model that served the call
};

class TileService {
 public:
  explicit TileService(TileServiceConfig cfg = {}) : cfg_(cfg), cache_(cfg.cache_capacity) {
    worker_ = std::thread([this] { run(); });
  }

  TileService(GeneratorCheckpoint ck, TileServiceConfig cfg = {}) : TileService(cfg) { load(std::move(ck)); }

  ~TileService() {
    {
      std::lock_guard lock(queue_mu_);
      stopping_ = true;
    }
    queue_cv_.notify_all();
    worker_.join();
  }

  TileService(const TileService&) = delete;
  TileService& operator=(const TileService&) = delete;

  /// Swaps in a checkpoint. Pending tiles of the old model still complete
  /// against the model they were queued for.
  void load(GeneratorCheckpoint ck) {
    auto model = std::make_shared<Model>();
    model->hash = model_hash(ck);
    model->ck = std::move(ck);
    model->latents["0"] = 0;
    std::unique_lock lock(model_mu_);
    model_ = std::move(model);
  }

  bool loaded() const { return current() != nullptr; }

  /// Tile edge length in pixels (the patch resolution), or 0 without a model.
  int tile_size() const {
    const auto m = current();
    return m ? m->ck.config().cfg.patch_resolution : 0;
  }

  std::string model_hash_or_empty() const {
    const auto m = current();
    return m ? m->hash : std::string();
  }

  TileResponse meta() const {
    const auto m = current();
    if (!m) return unavailable();
    const auto& cfg = m->ck.config().cfg;
    nlohmann::json ids = nlohmann::json::array();
    {
      std::shared_lock lock(m->latent_mu);
      for (const auto& [id, seed] : m->latents) ids.push_back(id);
    }
    const nlohmann::json j{{"s_max", cfg.s_max},
                           {"max_zoom", static_cast<int>(std::floor(cfg.s_max))},
                           {"tile_size", cfg.patch_resolution},
                           {"latents", ids},
                           {"model_hash", m->hash},
                           {"mode", to_string(m->ck.mode)}};
    return {200, j.dump(), "application/json", m->hash};
  }

  /// Registers the latent drawn from `seed`; the id is the seed in decimal.
  TileResponse new_latent(std::uint64_t seed) {
    const auto m = current();
    if (!m) return unavailable();
    if (m->ck.mode == ModelMode::kReconstruction)
      return error(409, "reconstruction-mode checkpoints represent one fixed image; latent sampling is disabled", m->hash);
    const std::string id = std::to_string(seed);
    {
      std::unique_lock lock(m->latent_mu);
      m->latents[id] = seed;
    }
    return {200, nlohmann::json{{"latent", id}}.dump(), "application/json", m->hash};
  }

  TileResponse tile(const TileAddress& a) {
    const auto m = current();
    if (!m) return unavailable();
    std::uint64_t seed = 0;
    {
      std::shared_lock lock(m->latent_mu);
      const auto it = m->latents.find(a.latent);
      if (it == m->latents.end()) return error(404, "unknown latent '" + a.latent + "'", m->hash);
      seed = it->second;
    }
    const int max_z = static_cast<int>(std::floor(m->ck.config().cfg.s_max));
    if (a.z < 0 || a.z > max_z) return error(404, "zoom level outside [0, " + std::to_string(max_z) + "]", m->hash);
    const long long n = 1LL << a.z;
    if (a.x < 0 || a.y < 0 || a.x >= n || a.y >= n) return error(404, "tile index outside [0, 2^z)", m->hash);
    const std::string key = m->hash + "/" + a.latent + "/" + std::to_string(a.z) + "/" + std::to_string(a.x) + "/" +
                            std::to_string(a.y);
    if (auto hit = cache_.get(key)) return {200, *hit, "image/png", m->hash};
    std::shared_future<std::string> job;
    {
      std::lock_guard lock(queue_mu_);
      if (const auto it = in_flight_.find(key); it != in_flight_.end()) {
        job = it->second;
      } else {
        if (queue_.size() >= cfg_.queue_depth) return error(503, "tile queue is full; retry shortly", m->hash);
        std::promise<std::string> promise;
        job = promise.get_future().share();
        in_flight_[key] = job;
        queue_.push_back({key, m, seed, a, std::move(promise)});
      }
    }
    queue_cv_.notify_one();
    try {
      return {200, job.get(), "image/png", m->hash};
    } catch (const std::exception& e) {
      return error(500, e.what(), m->hash);
    }
  }

  std::size_t cached_tiles() const { return cache_.size(); }

 private:
  struct Model {
    GeneratorCheckpoint ck;
    std::string hash;
    mutable std::shared_mutex latent_mu;
    std::map<std::string, std::uint64_t> latents;
  };

  struct Job {
    std::string key;
    std::shared_ptr<const Model> model;
    std::uint64_t seed;
    TileAddress address;
    std::promise<std::string> promise;
  };

  std::shared_ptr<Model> current() const {
    std::shared_lock lock(model_mu_);
    return model_;
  }

  static TileResponse error(int status, const std::string& message, const std::string& hash = {}) {
    return {status, nlohmann::json{{"error", message}}.dump(), "application/json", hash};
  }
  static TileResponse unavailable() { return error(503, "no checkpoint loaded"); }

  static std::string render(const Model& m, std::uint64_t seed, const TileAddress& a) {
    const auto& g = m.ck.generator;
    const double side = std::exp2(-a.z);
    const Region region{-0.5 + a.x * side, -0.5 + a.y * side, -0.5 + (a.x + 1) * side, -0.5 + (a.y + 1) * side};
    const auto z = latent_from_seed(seed, g.config().latent_dim);
    return encode_png(generate_slice(g, z, static_cast<double>(a.z), region));
  }

  void run() {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(queue_mu_);
        queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      try {
        std::string png = render(*job.model, job.seed, job.address);
        cache_.put(job.key, png);
        job.promise.set_value(std::move(png));
      } catch (...) {
        job.promise.set_exception(std::current_exception());
      }
      std::lock_guard lock(queue_mu_);
      in_flight_.erase(job.key);
    }
  }

  TileServiceConfig cfg_;
  LruCache<std::string> cache_;
  mutable std::shared_mutex model_mu_;
  std::shared_ptr<Model> model_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Job> queue_;
  std::map<std::string, std::shared_future<std::string>> in_flight_;
  bool stopping_ = false;
  std::thread worker_;
};

/// HTTP front end:
///   GET  /meta
///   GET  /tile/{latent}/{z}/{x}/{y}.png
///   POST /latent   body {"seed": n}
/// Every response carries X-Model-Hash (empty before a model is loaded).
class TileServer {
 public:
  explicit TileServer(TileService& service) : service_(service) {
    server_.Get("/meta", [this](const httplib::Request&, httplib::Response& res) { send(res, service_.meta()); });
    server_.Get(R"(/tile/([^/]+)/(-?\d+)/(-?\d+)/(-?\d+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      TileAddress a;
      a.latent = req.matches[1];
      try {
        a.z = std::stoi(req.matches[2]);
        a.x = std::stoll(req.matches[3]);
        a.y = std::stoll(req.matches[4]);
      } catch (const std::exception&) {
        send(res, {404, R"({"error":"malformed tile address"})", "application/json"});
        return;
      }
      send(res, service_.tile(a));
    });
    server_.Post("/latent", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t seed = 0;
      try {
        const auto j = nlohmann::json::parse(req.body);
        if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
        seed = j.at("seed").get<std::uint64_t>();
      } catch (const std::exception& e) {
        send(res, {400, nlohmann::json{{"error", std::string("expected {\"seed\": <non-negative integer>}: ") + e.what()}}.dump(),
                   "application/json"});
        return;
      }
      send(res, service_.new_latent(seed));
    });
    server_.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("X-Model-Hash", service_.model_hash_or_empty());
      if (res.body.empty()) res.set_content(R"({"error":"not found"})", "application/json");
    });
  }

  ~TileServer() { stop(); }

  /// Binds (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) return port_ = server_.bind_to_any_port(host);
    if (!server_.bind_to_port(host, port)) throw DataError("cannot bind " + host + ":" + std::to_string(port));
    return port_ = port;
  }

  /// Serves until stop(); blocks.
  void listen() { server_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  void send(httplib::Response& res, const TileResponse& r) {
    res.status = r.status;
    res.set_header("X-Model-Hash", r.model_hash.empty() ? service_.model_hash_or_empty() : r.model_hash);
    res.set_content(r.body, r.content_type);
  }

  TileService& service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace scalespace
