#include "linecolor/service.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include <httplib.h>
#include <openssl/evp.h>
#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/image_io.hpp"

namespace linecolor::service {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ModelStore

ModelStore::ModelStore(fs::path dir, std::size_t cache_capacity)
    : dir_(std::move(dir)), capacity_(std::max<std::size_t>(1, cache_capacity)) {}

ModelStore::~ModelStore() {
  if (loader_.joinable()) loader_.join();
}

std::vector<std::string> ModelStore::list() const {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir_)) return ids;
  for (const auto& e : fs::directory_iterator(dir_)) {
    if (e.is_regular_file() && e.path().extension() == ".ckpt") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string ModelStore::default_id() const {
  auto ids = list();
  return ids.empty() ? std::string() : ids.front();
}

void ModelStore::preload() {
  const auto id = default_id();
  if (!id.empty()) {
    auto model = inference::ColorModel::load(dir_ / (id + ".ckpt"), id);
    std::lock_guard lock(mutex_);
    cache_.emplace_front(id, std::move(model));
  }
  ready_ = true;
}

void ModelStore::preload_async() {
  loader_ = std::thread([this] {
    try {
      preload();
    } catch (const std::exception& e) {
      std::cerr << "model preload failed: " << e.what() << "\n";
      ready_ = true;
    }
  });
}

ModelStore::State ModelStore::state() const {
  if (!ready_) return State::kLoading;
  return list().empty() ? State::kEmpty : State::kReady;
}

std::vector<std::string> ModelStore::loaded_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, model] : cache_) ids.push_back(id);
  return ids;
}

std::shared_ptr<const inference::ColorModel> ModelStore::get(const std::string& id) {
  const auto ids = list();
  if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
    throw UnknownModelError("unknown model_id '" + id + "'");
  }
  if (!ready_) throw ModelLoadingError("models are still loading");
  std::lock_guard lock(mutex_);
  for (auto it = cache_.begin(); it != cache_.end(); ++it) {
    if (it->first == id) {
      cache_.splice(cache_.begin(), cache_, it);
      return cache_.front().second;
    }
  }
  auto model = inference::ColorModel::load(dir_ / (id + ".ckpt"), id);
  cache_.emplace_front(id, model);
  while (cache_.size() > capacity_) cache_.pop_back();
  return model;
}

// ---------------------------------------------------------------------------
// Config and helpers

std::pair<std::string, int> parse_bind_address(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ArgumentError("bind address must look like HOST:PORT, got '" + text + "'");
  }
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ArgumentError("invalid port in bind address '" + text + "'");
  }
  if (port < 0 || port > 65535) throw ArgumentError("port out of range in '" + text + "'");
  return {text.substr(0, colon), port};
}

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  if (const char* v = std::getenv("MODEL_DIR")) c.model_dir = v;
  if (const char* v = std::getenv("MAX_SIDE")) c.max_side = std::atoi(v);
  if (const char* v = std::getenv("BIND_ADDR")) {
    auto [host, port] = parse_bind_address(v);
    c.host = host;
    c.port = port;
  }
  return c;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  }
  if (clean.size() % 4 != 0) throw DataValidationError("malformed base64 payload");
  std::vector<std::uint8_t> out(3 * clean.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw DataValidationError("malformed base64 payload");
  std::size_t padding = 0;
  if (!clean.empty() && clean.back() == '=') ++padding;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", message}, {"status", status}}.dump(), "application/json");
}

struct ColorizeInputs {
  std::vector<std::uint8_t> line_art;
  std::optional<std::vector<std::uint8_t>> strokes;
  std::string model_id;
};

std::vector<std::uint8_t> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

ColorizeInputs parse_inputs(const httplib::Request& req) {
  ColorizeInputs in;
  if (req.is_multipart_form_data()) {
    if (!req.has_file("line_art")) throw ArgumentError("missing multipart field 'line_art'");
    in.line_art = to_bytes(req.get_file_value("line_art").content);
    if (req.has_file("strokes")) {
      auto s = req.get_file_value("strokes").content;
      if (!s.empty()) in.strokes = to_bytes(s);
    }
    if (req.has_file("model_id")) in.model_id = req.get_file_value("model_id").content;
    return in;
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception&) {
    throw ArgumentError("request body must be multipart/form-data or JSON");
  }
  if (!body.contains("line_art") || !body["line_art"].is_string()) {
    throw ArgumentError("missing base64 field 'line_art'");
  }
  in.line_art = base64_decode(body["line_art"].get<std::string>());
  if (body.contains("strokes") && body["strokes"].is_string() && !body["strokes"].get<std::string>().empty()) {
    in.strokes = base64_decode(body["strokes"].get<std::string>());
  }
  in.model_id = body.value("model_id", std::string());
  return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// ColorizeService

ColorizeService::ColorizeService(ServiceConfig config)
    : config_(std::move(config)),
      store_(config_.model_dir, config_.cache_capacity),
      server_(std::make_unique<httplib::Server>()) {
  server_->set_payload_max_length(config_.max_payload_bytes);
  register_routes();
}

ColorizeService::~ColorizeService() { stop(); }

int ColorizeService::bind_to_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool ColorizeService::listen_after_bind() { return server_->listen_after_bind(); }

bool ColorizeService::listen() { return server_->listen(config_.host, config_.port); }

void ColorizeService::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void ColorizeService::register_routes() {
  server_->Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    const char* status = "ok";
    switch (store_.state()) {
      case ModelStore::State::kLoading: status = "loading"; break;
      case ModelStore::State::kEmpty: status = "no_models"; break;
      case ModelStore::State::kReady: status = "ok"; break;
    }
    res.set_content(nlohmann::json{{"status", status}, {"loaded_models", store_.loaded_ids()}}.dump(),
                    "application/json");
  });

  server_->Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    auto loaded = store_.loaded_ids();
    nlohmann::json models = nlohmann::json::array();
    for (const auto& id : store_.list()) {
      nlohmann::json entry{{"id", id},
                           {"loaded", std::find(loaded.begin(), loaded.end(), id) != loaded.end()}};
      try {
        const auto ckpt = Checkpoint::load(config_.model_dir / (id + ".ckpt"));
        entry["iteration"] = ckpt.meta().value("iteration", std::int64_t{0});
        entry["config"] = ckpt.meta().at("config").at("generator");
      } catch (const std::exception& e) {
        entry["error"] = e.what();
      }
      models.push_back(entry);
    }
    res.set_content(nlohmann::json{{"models", models}, {"default", store_.default_id()}}.dump(),
                    "application/json");
  });

  server_->Post("/v1/colorize", [this](const httplib::Request& req, httplib::Response& res) {
    const auto start = std::chrono::steady_clock::now();
    char request_id[32];
    std::snprintf(request_id, sizeof(request_id), "req-%08llu",
                  static_cast<unsigned long long>(++request_counter_));
    ColorizeInputs in;
    try {
      in = parse_inputs(req);
    } catch (const ArgumentError& e) {
      return send_error(res, 400, e.what());
    } catch (const DataValidationError& e) {
      return send_error(res, 400, e.what());
    }
    if (in.model_id.empty()) in.model_id = store_.default_id();

    std::shared_ptr<const inference::ColorModel> model;
    try {
      model = store_.get(in.model_id);
    } catch (const UnknownModelError& e) {
      return send_error(res, 404, e.what());
    } catch (const ModelLoadingError& e) {
      res.set_header("Retry-After", "1");
      return send_error(res, 503, e.what());
    } catch (const std::exception& e) {
      return send_error(res, 503, std::string("model failed to load: ") + e.what());
    }

    // Size limits are checked from the image headers before any pixel decode.
    const auto dims = io::peek_dimensions(in.line_art);
    if (!dims) return send_error(res, 422, "line_art is not a decodable PNG or JPEG");
    if (dims->width > config_.max_side || dims->height > config_.max_side) {
      return send_error(res, 400, "line_art exceeds the maximum side of " + std::to_string(config_.max_side));
    }
    if (in.strokes) {
      const auto sdims = io::peek_dimensions(*in.strokes);
      if (!sdims) return send_error(res, 422, "strokes is not a decodable PNG or JPEG");
      if (sdims->width != dims->width || sdims->height != dims->height) {
        return send_error(res, 400, "strokes dimensions do not match line_art");
      }
    }

    io::Bytes png;
    try {
      std::optional<std::span<const std::uint8_t>> strokes;
      if (in.strokes) strokes = std::span<const std::uint8_t>(*in.strokes);
      png = inference::colorize_png(*model, in.line_art, strokes);
    } catch (const DataValidationError& e) {
      return send_error(res, 422, e.what());
    } catch (const ArgumentError& e) {
      return send_error(res, 400, e.what());
    }
    const double timing_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    res.set_header("X-Request-Id", request_id);
    res.set_header("X-Model-Id", model->id());
    res.set_header("X-Timing-Ms", std::to_string(timing_ms));
    if (req.get_param_value("format") == "png") {
      res.set_content(std::string(png.begin(), png.end()), "image/png");
      return;
    }
    res.set_content(nlohmann::json{{"image", base64_encode(png)},
                                   {"timing_ms", timing_ms},
                                   {"model_id", model->id()},
                                   {"request_id", request_id},
                                   {"width", dims->width},
                                   {"height", dims->height}}
                        .dump(),
                    "application/json");
  });
}

}  // namespace linecolor::service
