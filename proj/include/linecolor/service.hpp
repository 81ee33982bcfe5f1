#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "linecolor/inference.hpp"

namespace httplib {
class Server;
}

namespace linecolor::service {

class UnknownModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelLoadingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Read-only view of a directory of `*.ckpt` files. Models are addressed by
/// file stem and kept in a small LRU cache.
class ModelStore {
 public:
  enum class State { kLoading, kReady, kEmpty };

  ModelStore(std::filesystem::path dir, std::size_t cache_capacity);
  ~ModelStore();

  std::vector<std::string> list() const;
  /// First id in sorted order; empty when there are no models.
  std::string default_id() const;

  /// Loads the default model; the store reports kLoading until this finishes.
  void preload();
  void preload_async();
  State state() const;
  std::vector<std::string> loaded_ids() const;

  /// Throws UnknownModelError for ids not on disk and ModelLoadingError while
  /// the initial load is in progress. Other ids are loaded on demand.
  std::shared_ptr<const inference::ColorModel> get(const std::string& id);

 private:
  std::filesystem::path dir_;
  std::size_t capacity_;
  std::atomic<bool> ready_{false};
  mutable std::mutex mutex_;
  std::list<std::pair<std::string, std::shared_ptr<const inference::ColorModel>>> cache_;
  std::thread loader_;
};

struct ServiceConfig {
  std::filesystem::path model_dir = "models";
  int max_side = 1024;
  std::size_t max_payload_bytes = 64u << 20;
  std::size_t cache_capacity = 2;
  std::string host = "127.0.0.1";
  int port = 8080;

  /// Defaults overridden by MODEL_DIR, MAX_SIDE and BIND_ADDR (HOST:PORT).
  static ServiceConfig from_env();
};

/// Splits "HOST:PORT"; throws ArgumentError when malformed.
std::pair<std::string, int> parse_bind_address(const std::string& text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws DataValidationError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// HTTP front end:
///   POST /v1/colorize  multipart (line_art, strokes?, model_id?) or JSON with
///                      base64 fields; JSON response, or raw PNG with ?format=png
///   GET  /v1/models
///   GET  /healthz
class ColorizeService {
 public:
  explicit ColorizeService(ServiceConfig config);
  ~ColorizeService();

  ModelStore& models() { return store_; }
  const ServiceConfig& config() const { return config_; }
  httplib::Server& http() { return *server_; }

  /// Binds an ephemeral port on `host` and returns it.
  int bind_to_any_port(const std::string& host);
  /// Serves on an already-bound socket; blocks until stop().
  bool listen_after_bind();
  /// Binds config().host:config().port and serves; blocks until stop().
  bool listen();
  void stop();

 private:
  void register_routes();

  ServiceConfig config_;
  ModelStore store_;
  std::unique_ptr<httplib::Server> server_;
  std::atomic<std::uint64_t> request_counter_{0};
};

}  // namespace linecolor::service
