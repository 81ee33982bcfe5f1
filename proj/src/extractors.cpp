#include "linecolor/extractors.hpp"

#include <algorithm>
#include <cmath>

#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/networks.hpp"
#include "linecolor/pipeline.hpp"

namespace linecolor::features {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(int in, int out, int stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor run_relu_stack(const nn::ModuleList& convs, torch::Tensor x) {
  for (const auto& m : *convs) {
    x = torch::relu(m->as<nn::Conv2dImpl>()->forward(x));
  }
  return x;
}

void freeze(nn::Module& module) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(false);
  module.eval();
}

int channels_from_tag(const std::string& tag, const std::string& prefix) {
  if (tag.rfind(prefix, 0) != 0) {
    throw CheckpointError("checkpoint tag '" + tag + "' is not a '" + prefix + "*' extractor");
  }
  try {
    return std::stoi(tag.substr(prefix.size()));
  } catch (const std::exception&) {
    throw CheckpointError("malformed extractor tag '" + tag + "'");
  }
}

std::string tag_in(const Checkpoint& ckpt, const std::string& prefix) {
  if (prefix.empty()) return ckpt.architecture_tag();
  if (!ckpt.meta().contains(prefix + "tag")) {
    throw CheckpointError("checkpoint carries no extractor under '" + prefix + "'");
  }
  return ckpt.meta().at(prefix + "tag").get<std::string>();
}

torch::Tensor as_batch(const torch::Tensor& x, std::int64_t channels, const char* what) {
  if (x.dim() == 3) return as_batch(x.unsqueeze(0), channels, what);
  require_nchw(x, channels, what);
  return x;
}

}  // namespace

LocalFeatureNetImpl::LocalFeatureNetImpl(int channels) : channels_(channels) {
  if (channels < 8) throw ArgumentError("local feature channels must be >= 8");
  const int widths[6] = {channels / 8, channels / 4, channels / 2, channels, channels, channels};
  const int strides[6] = {1, 2, 2, 2, 2, 1};
  convs = register_module("convs", nn::ModuleList());
  int prev = 1;
  for (int i = 0; i < 6; ++i) {
    convs->push_back(conv3x3(prev, widths[i], strides[i]));
    prev = widths[i];
  }
}

torch::Tensor LocalFeatureNetImpl::forward(const torch::Tensor& line) {
  return run_relu_stack(convs, line);
}

PerceptualNetImpl::PerceptualNetImpl(int channels) : channels_(channels) {
  if (channels < 4) throw ArgumentError("perceptual feature channels must be >= 4");
  const int widths[4] = {channels / 4, channels / 2, channels / 2, channels};
  const int strides[4] = {1, 2, 1, 2};
  convs = register_module("convs", nn::ModuleList());
  int prev = 3;
  for (int i = 0; i < 4; ++i) {
    convs->push_back(conv3x3(prev, widths[i], strides[i]));
    prev = widths[i];
  }
}

torch::Tensor PerceptualNetImpl::forward(const torch::Tensor& rgb) { return run_relu_stack(convs, rgb); }

std::string local_tag(int channels) { return "f1-local-v1-c" + std::to_string(channels); }
std::string perceptual_tag(int channels) { return "f2-perceptual-v1-c" + std::to_string(channels); }

// ---------------------------------------------------------------------------

LocalFeatures LocalFeatures::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const auto tag = tag_in(ckpt, prefix);
  LocalFeatureNet net(channels_from_tag(tag, "f1-local-v1-c"));
  ckpt.load_module(prefix, *net);
  return from_network(net, tag);
}

LocalFeatures LocalFeatures::from_network(LocalFeatureNet net, std::string tag) {
  LocalFeatures f;
  freeze(*net);
  f.net_ = std::move(net);
  f.tag_ = std::move(tag);
  return f;
}

int LocalFeatures::channels() const { return network()->channels(); }

LocalFeatureNet& LocalFeatures::network() {
  if (!net_) throw NotInitializedError("local feature extractor (F1) not initialized");
  return net_;
}

const LocalFeatureNet& LocalFeatures::network() const {
  if (!net_) throw NotInitializedError("local feature extractor (F1) not initialized");
  return net_;
}

torch::Tensor LocalFeatures::operator()(const torch::Tensor& line) const {
  auto net = network();
  auto x = as_batch(line, 1, "local features input");
  if (x.size(2) % kLocalStride != 0 || x.size(3) % kLocalStride != 0) {
    throw ArgumentError("local features input height/width must be divisible by 16");
  }
  auto out = net->forward(x.to(net->convs[0]->as<nn::Conv2dImpl>()->weight.scalar_type()));
  return line.dim() == 3 ? out.squeeze(0) : out;
}

FeatureMap LocalFeatures::extract(const LineArt& line) const {
  return FeatureMap{(*this)(line.pixels), kLocalStride};
}

void LocalFeatures::store(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put_module(prefix, *network());
  ckpt.meta()[prefix + "tag"] = tag_;
}

PerceptualFeatures PerceptualFeatures::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const auto tag = tag_in(ckpt, prefix);
  PerceptualNet net(channels_from_tag(tag, "f2-perceptual-v1-c"));
  ckpt.load_module(prefix, *net);
  return from_network(net, tag);
}

PerceptualFeatures PerceptualFeatures::from_network(PerceptualNet net, std::string tag) {
  PerceptualFeatures f;
  freeze(*net);
  f.net_ = std::move(net);
  f.tag_ = std::move(tag);
  return f;
}

int PerceptualFeatures::channels() const { return network()->channels(); }

PerceptualNet& PerceptualFeatures::network() {
  if (!net_) throw NotInitializedError("perceptual feature extractor (F2) not initialized");
  return net_;
}

const PerceptualNet& PerceptualFeatures::network() const {
  if (!net_) throw NotInitializedError("perceptual feature extractor (F2) not initialized");
  return net_;
}

torch::Tensor PerceptualFeatures::operator()(const torch::Tensor& rgb) const {
  auto net = network();
  auto x = as_batch(rgb, 3, "perceptual features input");
  if (x.size(2) % kPerceptualStride != 0 || x.size(3) % kPerceptualStride != 0) {
    throw ArgumentError("perceptual features input height/width must be divisible by 4");
  }
  auto out = net->forward(x);
  return rgb.dim() == 3 ? out.squeeze(0) : out;
}

void PerceptualFeatures::store(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put_module(prefix, *network());
  ckpt.meta()[prefix + "tag"] = tag_;
}

// ---------------------------------------------------------------------------
// Tags

torch::Tensor derive_tags(const TrainingPair& pair) {
  require_chw(pair.color.pixels, 3, "derive_tags");
  auto rgb = pair.color.pixels.add(1.0).mul(0.5).clamp(0.0, 1.0);
  auto maxc = std::get<0>(rgb.max(0));
  auto minc = std::get<0>(rgb.min(0));
  auto delta = maxc - minc;
  auto sat = torch::where(maxc > 0, delta / maxc.clamp_min(1e-8), torch::zeros_like(maxc));

  auto r = rgb[0], g = rgb[1], b = rgb[2];
  auto d = delta.clamp_min(1e-8);
  auto hue = torch::where(maxc == r, torch::fmod((g - b) / d + 6.0, 6.0),
                          torch::where(maxc == g, (b - r) / d + 2.0, (r - g) / d + 4.0));
  auto bucket = hue.floor().clamp(0, 5).to(torch::kLong);

  auto tags = torch::zeros({kTagCount});
  auto saturated = sat > 0.2;
  if (saturated.any().item<bool>()) {
    auto hist = torch::bincount(bucket.masked_select(saturated), {}, 6);
    tags[hist.argmax().item<std::int64_t>()] = 1.0;
  }
  tags[sat.mean().template item<double>() < 0.35 ? 6 : 7] = 1.0;
  const double density = (pair.line.pixels < 0.5).to(torch::kFloat32).mean().template item<double>();
  tags[density < 0.04 ? 8 : (density < 0.10 ? 9 : 10)] = 1.0;
  return tags;
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"channels", channels},         {"side", side},
          {"iterations", iterations},     {"batch_size", batch_size},
          {"learning_rate", learning_rate}, {"held_out_fraction", held_out_fraction},
          {"eval_every", eval_every},     {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  PretrainConfig d;
  PretrainConfig c;
  c.channels = j.value("channels", d.channels);
  c.side = j.value("side", d.side);
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.held_out_fraction = j.value("held_out_fraction", d.held_out_fraction);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.seed = j.value("seed", d.seed);
  return c;
}

namespace {

torch::Tensor center_square(const torch::Tensor& chw, int side) {
  auto resized = data::resize_min_side(chw, side);
  const auto top = (resized.size(1) - side) / 2;
  const auto left = (resized.size(2) - side) / 2;
  return resized.narrow(1, top, side).narrow(2, left, side).contiguous();
}

template <typename Net>
PretrainResult pretrain(const std::vector<TrainingPair>& corpus, const PretrainConfig& config,
                        bool use_line_art, const std::string& tag) {
  if (corpus.size() < kMinPretrainCorpus) {
    throw ArgumentError("pretraining corpus has " + std::to_string(corpus.size()) +
                        " images; at least " + std::to_string(kMinPretrainCorpus) + " are required");
  }
  if (config.side % 16 != 0 || config.iterations < 1 || config.batch_size < 1) {
    throw ArgumentError("pretraining config: side must be a multiple of 16, iterations and batch positive");
  }
  std::vector<torch::Tensor> inputs;
  std::vector<torch::Tensor> targets;
  for (const auto& pair : corpus) {
    inputs.push_back(use_line_art ? center_square(pair.line.pixels, config.side).clamp(0.0, 1.0)
                                  : center_square(pair.color.pixels, config.side).clamp(-1.0, 1.0));
    targets.push_back(derive_tags(pair));
  }
  auto x_all = torch::stack(inputs);
  auto y_all = torch::stack(targets);

  auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
  auto order = torch::randperm(static_cast<std::int64_t>(corpus.size()), gen, torch::kLong);
  const auto held = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::llround(config.held_out_fraction * corpus.size())));
  auto test_idx = order.narrow(0, 0, held);
  auto train_idx = order.narrow(0, held, order.size(0) - held);
  auto x_test = x_all.index_select(0, test_idx);
  auto y_test = y_all.index_select(0, test_idx);

  Net net(config.channels);
  nn::Linear head(config.channels, kTagCount);
  nets::initialize_weights(*net, config.seed);
  nets::initialize_weights(*head, config.seed + 1);
  std::vector<torch::Tensor> params = net->parameters();
  for (const auto& p : head->parameters()) params.push_back(p);
  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(config.learning_rate));

  auto forward = [&](const torch::Tensor& x) { return head(pooled(net->forward(x))); };
  auto held_out_loss = [&] {
    torch::NoGradGuard no_grad;
    return torch::binary_cross_entropy_with_logits(forward(x_test), y_test).template item<double>();
  };

  PretrainResult result;
  for (int it = 1; it <= config.iterations; ++it) {
    auto pick = train_idx.index_select(
        0, torch::randint(train_idx.size(0), {config.batch_size}, gen, torch::kLong));
    auto loss = torch::binary_cross_entropy_with_logits(forward(x_all.index_select(0, pick)),
                                                        y_all.index_select(0, pick));
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    if (it % config.eval_every == 0 || it == config.iterations) {
      result.held_out_loss.push_back(held_out_loss());
    }
  }

  Checkpoint ckpt(tag);
  ckpt.put_module("", *net);
  ckpt.put_module("pretext_head.", *head);
  ckpt.meta()["training_manifest"] = {{"config", config.to_json()},
                                      {"input", use_line_art ? "line_art" : "illustration"},
                                      {"corpus_size", corpus.size()},
                                      {"held_out_size", held},
                                      {"held_out_loss", result.held_out_loss}};
  result.checkpoint = std::move(ckpt);
  return result;
}

}  // namespace

PretrainResult pretrain_local(const std::vector<TrainingPair>& corpus, const PretrainConfig& config) {
  return pretrain<LocalFeatureNet>(corpus, config, true, local_tag(config.channels));
}

PretrainResult pretrain_perceptual(const std::vector<TrainingPair>& corpus,
                                   const PretrainConfig& config) {
  return pretrain<PerceptualNet>(corpus, config, false, perceptual_tag(config.channels));
}

torch::Tensor pooled(const torch::Tensor& feature_maps) {
  if (feature_maps.dim() == 3) return feature_maps.mean({1, 2}).unsqueeze(0);
  return feature_maps.mean({2, 3});
}

double linear_probe_accuracy(const torch::Tensor& train_x, const torch::Tensor& train_y,
                             const torch::Tensor& test_x, const torch::Tensor& test_y,
                             std::uint64_t seed) {
  if (train_x.dim() != 2 || test_x.dim() != 2 || train_x.size(1) != test_x.size(1)) {
    throw ArgumentError("linear probe: feature matrices must be (N, d) with equal d");
  }
  const auto classes = std::max(train_y.max().item<std::int64_t>(), test_y.max().item<std::int64_t>()) + 1;
  auto mean = train_x.mean(0, true);
  auto std = train_x.std(0, true, true).clamp_min(1e-6);
  auto xs = ((train_x - mean) / std).detach();
  auto xt = ((test_x - mean) / std).detach();

  nn::Linear probe(train_x.size(1), classes);
  nets::initialize_weights(*probe, seed);
  torch::optim::Adam optimizer(probe->parameters(), torch::optim::AdamOptions(0.05).weight_decay(1e-3));
  for (int epoch = 0; epoch < 300; ++epoch) {
    auto loss = torch::cross_entropy_loss(probe(xs), train_y);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
  }
  torch::NoGradGuard no_grad;
  auto predicted = probe(xt).argmax(1);
  return predicted.eq(test_y).to(torch::kFloat64).mean().template item<double>();
}

}  // namespace linecolor::features
