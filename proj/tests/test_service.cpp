#include <chrono>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/inference.hpp"
#include "linecolor/manifest.hpp"
#include "linecolor/service.hpp"
#include "support.hpp"

using namespace linecolor;
using namespace linecolor::service;
using nlohmann::json;

namespace {

std::filesystem::path model_dir() {
  static const auto dir = [] {
    auto d = fixtures::scratch_dir("service_models");
    train::Trainer t(fixtures::tiny_train_config(4), fixtures::random_f1(32), fixtures::random_f2(16));
    t.checkpoint().save(d / "alpha.ckpt");
    train::Trainer u(fixtures::tiny_train_config(6), fixtures::random_f1(32), fixtures::random_f2(16));
    u.checkpoint().save(d / "beta.ckpt");
    write_file_atomic(d / "broken.ckpt", std::string("garbage"));
    return d;
  }();
  return dir;
}

std::string png_string(const io::Bytes& b) { return std::string(b.begin(), b.end()); }

io::Bytes line_png(int h, int w) { return io::encode_grey_png(torch::rand({1, h, w})); }

class Server {
 public:
  explicit Server(ServiceConfig config, bool preload = true) : service_(std::move(config)) {
    if (preload) service_.models().preload();
    port_ = service_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { service_.listen_after_bind(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
    for (int i = 0; i < 100 && !client_->Get("/healthz"); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
  ~Server() {
    service_.stop();
    thread_.join();
  }
  httplib::Client& client() { return *client_; }
  ColorizeService& service() { return service_; }
  int port() const { return port_; }

 private:
  ColorizeService service_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

ServiceConfig config_for(const std::filesystem::path& dir) {
  ServiceConfig c;
  c.model_dir = dir;
  c.max_side = 256;
  return c;
}

httplib::Result post_json(httplib::Client& c, const json& body, const std::string& path = "/v1/colorize") {
  return c.Post(path, body.dump(), "application/json");
}

}  // namespace

TEST(Base64, RoundTripAndRejects) {
  for (std::string s : {"", "a", "ab", "abc", "abcd", "hello world!"}) {
    const std::vector<std::uint8_t> v(s.begin(), s.end());
    EXPECT_EQ(base64_decode(base64_encode(v)), v) << s;
  }
  const std::vector<std::uint8_t> v{'M', 'a', 'n'};
  EXPECT_EQ(base64_encode(v), "TWFu");
  EXPECT_EQ(base64_decode("TW\nFu"), v);
  EXPECT_THROW(base64_decode("TWF"), DataValidationError);
  EXPECT_THROW(base64_decode("TW?u"), DataValidationError);
}

TEST(BindAddress, Parsing) {
  EXPECT_EQ(parse_bind_address("0.0.0.0:9000"), std::make_pair(std::string("0.0.0.0"), 9000));
  EXPECT_THROW(parse_bind_address("localhost"), ArgumentError);
  EXPECT_THROW(parse_bind_address("host:99999"), ArgumentError);
  EXPECT_THROW(parse_bind_address("host:abc"), ArgumentError);
}

TEST(ModelStoreTest, ListsAndCaches) {
  ModelStore store(model_dir(), 1);
  EXPECT_EQ(store.list(), (std::vector<std::string>{"alpha", "beta", "broken"}));
  EXPECT_EQ(store.default_id(), "alpha");
  EXPECT_EQ(store.state(), ModelStore::State::kLoading);
  EXPECT_THROW(store.get("alpha"), ModelLoadingError);
  store.preload();
  EXPECT_EQ(store.state(), ModelStore::State::kReady);
  EXPECT_EQ(store.loaded_ids(), (std::vector<std::string>{"alpha"}));
  EXPECT_THROW(store.get("gamma"), UnknownModelError);
  EXPECT_THROW(store.get("../alpha"), UnknownModelError);
  EXPECT_EQ(store.get("beta")->id(), "beta");
  EXPECT_EQ(store.loaded_ids(), (std::vector<std::string>{"beta"}));
  EXPECT_THROW(store.get("broken"), CheckpointError);
}

TEST(Service, HealthAndModels) {
  Server s(config_for(model_dir()));
  auto health = s.client().Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto h = json::parse(health->body);
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("loaded_models"), json::array({"alpha"}));
  auto models = s.client().Get("/v1/models");
  ASSERT_TRUE(models);
  const auto m = json::parse(models->body);
  EXPECT_EQ(m.at("default"), "alpha");
  EXPECT_EQ(m.at("models").size(), 3u);
  EXPECT_EQ(m.at("models")[0].at("id"), "alpha");
  EXPECT_TRUE(m.at("models")[0].at("loaded").get<bool>());
}

TEST(Service, LoadingStateReturns503) {
  Server s(config_for(model_dir()), false);
  EXPECT_EQ(json::parse(s.client().Get("/healthz")->body).at("status"), "loading");
  auto r = post_json(s.client(), {{"line_art", base64_encode(line_png(32, 32))}});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
  EXPECT_TRUE(r->has_header("Retry-After"));
}

TEST(Service, EmptyModelDirectory) {
  Server s(config_for(fixtures::scratch_dir("service_empty")));
  EXPECT_EQ(json::parse(s.client().Get("/healthz")->body).at("status"), "no_models");
  auto r = post_json(s.client(), {{"line_art", base64_encode(line_png(32, 32))}});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
}

TEST(Service, ColorizeJsonKeepsSizeAndMatchesLibrary) {
  Server s(config_for(model_dir()));
  const auto line = line_png(100, 100);
  auto r = post_json(s.client(), {{"line_art", base64_encode(line)}});
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const auto body = json::parse(r->body);
  EXPECT_EQ(body.at("width"), 100);
  EXPECT_EQ(body.at("height"), 100);
  EXPECT_EQ(body.at("model_id"), "alpha");
  EXPECT_TRUE(r->has_header("X-Request-Id"));
  EXPECT_EQ(r->get_header_value("X-Model-Id"), "alpha");
  const auto png = base64_decode(body.at("image").get<std::string>());
  const auto img = io::decode_rgb(png);
  EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 100, 100}));
  const auto model = inference::ColorModel::load(model_dir() / "alpha.ckpt", "alpha");
  EXPECT_EQ(png, inference::colorize_png(*model, line, std::nullopt));
}

TEST(Service, ColorizeMultipartWithStrokesAndRawPng) {
  Server s(config_for(model_dir()));
  const auto line = line_png(64, 48);
  auto strokes = torch::zeros({4, 64, 48});
  strokes.index_put_({torch::indexing::Slice(), torch::indexing::Slice(8, 24), torch::indexing::Slice(8, 24)}, 1.0);
  const auto stroke_png = io::encode_rgba_png(strokes);
  httplib::MultipartFormDataItems items = {
      {"line_art", png_string(line), "line.png", "image/png"},
      {"strokes", png_string(stroke_png), "strokes.png", "image/png"},
      {"model_id", "beta", "", ""},
  };
  auto r = s.client().Post("/v1/colorize?format=png", items);
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(r->get_header_value("X-Model-Id"), "beta");
  const auto model = inference::ColorModel::load(model_dir() / "beta.ckpt", "beta");
  EXPECT_EQ(r->body, png_string(inference::colorize_png(*model, line, stroke_png)));
}

TEST(Service, ErrorStatuses) {
  Server s(config_for(model_dir()));
  auto& c = s.client();
  auto unknown = post_json(c, {{"line_art", base64_encode(line_png(32, 32))}, {"model_id", "gamma"}});
  EXPECT_EQ(unknown->status, 404);
  EXPECT_EQ(json::parse(unknown->body).at("status"), 404);
  EXPECT_EQ(c.Post("/v1/colorize", "{not json", "application/json")->status, 400);
  EXPECT_EQ(post_json(c, {{"strokes", ""}})->status, 400);
  EXPECT_EQ(post_json(c, {{"line_art", "@@@@"}})->status, 400);
  const std::vector<std::uint8_t> junk{'n', 'o', 'p', 'e'};
  EXPECT_EQ(post_json(c, {{"line_art", base64_encode(junk)}})->status, 422);
  EXPECT_EQ(post_json(c, {{"line_art", base64_encode(line_png(32, 300))}})->status, 400);
  EXPECT_EQ(post_json(c, {{"line_art", base64_encode(line_png(32, 32))},
                          {"strokes", base64_encode(io::encode_rgba_png(torch::zeros({4, 16, 16})))}})
                ->status,
            400);
  auto broken = post_json(c, {{"line_art", base64_encode(line_png(32, 32))}, {"model_id", "broken"}});
  EXPECT_EQ(broken->status, 503);
}

TEST(Service, ConcurrentRequestsAllSucceed) {
  Server s(config_for(model_dir()));
  const auto body = json{{"line_art", base64_encode(line_png(32, 32))}}.dump();
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&] {
      httplib::Client c("127.0.0.1", s.port());
      c.set_read_timeout(120, 0);
      auto r = c.Post("/v1/colorize", body, "application/json");
      ok += r && r->status == 200;
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 4);
}
