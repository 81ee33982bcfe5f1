#include "linecolor/networks.hpp"

#include <cmath>
#include <string>

#include <torch/torch.h>

#include "linecolor/errors.hpp"

namespace linecolor::nets {

namespace nn = torch::nn;

torch::Tensor pixel_shuffle(const torch::Tensor& input, std::int64_t r) {
  if (r < 1) {
    throw ArgumentError("pixel_shuffle: upscale factor must be >= 1");
  }
  const bool batched = input.dim() == 4;
  if (!batched && input.dim() != 3) {
    throw ArgumentError("pixel_shuffle: expected (C, h, w) or (N, C, h, w) input");
  }
  auto x = batched ? input : input.unsqueeze(0);
  const auto n = x.size(0);
  const auto channels = x.size(1);
  const auto h = x.size(2);
  const auto w = x.size(3);
  if (channels % (r * r) != 0) {
    throw ArgumentError("pixel_shuffle: " + std::to_string(channels) +
                        " channels are not divisible by r^2 = " + std::to_string(r * r));
  }
  const auto c = channels / (r * r);
  auto out = x.reshape({n, c, r, r, h, w}).permute({0, 1, 4, 2, 5, 3}).reshape({n, c, h * r, w * r});
  return batched ? out : out.squeeze(0);
}

torch::Tensor pixel_unshuffle(const torch::Tensor& input, std::int64_t r) {
  if (r < 1) {
    throw ArgumentError("pixel_unshuffle: downscale factor must be >= 1");
  }
  const bool batched = input.dim() == 4;
  if (!batched && input.dim() != 3) {
    throw ArgumentError("pixel_unshuffle: expected (C, H, W) or (N, C, H, W) input");
  }
  auto x = batched ? input : input.unsqueeze(0);
  const auto n = x.size(0);
  const auto c = x.size(1);
  if (x.size(2) % r != 0 || x.size(3) % r != 0) {
    throw ArgumentError("pixel_unshuffle: spatial size not divisible by r");
  }
  const auto h = x.size(2) / r;
  const auto w = x.size(3) / r;
  auto out = x.reshape({n, c, h, r, w, r}).permute({0, 1, 3, 5, 2, 4}).reshape({n, c * r * r, h, w});
  return batched ? out : out.squeeze(0);
}

// ---------------------------------------------------------------------------
// Configs

GeneratorConfig GeneratorConfig::paper_scale() {
  GeneratorConfig c;
  c.base_width = 32;
  c.block_counts = {20, 10, 10, 5};
  c.cardinality = 32;
  c.image_side = 512;
  c.feature_channels = 512;
  return c;
}

void GeneratorConfig::validate() const {
  if (base_width < 1 || cardinality < 1 || feature_channels < 1) {
    throw ArgumentError("generator config: widths and cardinality must be positive");
  }
  for (int b : block_counts) {
    if (b < 0) throw ArgumentError("generator config: block counts must be non-negative");
  }
  for (int d : dilation_plan) {
    if (d < 1) throw ArgumentError("generator config: dilations must be >= 1");
  }
  if (image_side < 16 || image_side % 16 != 0) {
    throw ArgumentError("generator config: image_side must be a positive multiple of 16");
  }
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"base_width", base_width},     {"block_counts", block_counts},
          {"dilation_plan", dilation_plan}, {"cardinality", cardinality},
          {"image_side", image_side},     {"feature_channels", feature_channels}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) { return from_json(j, GeneratorConfig{}); }

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j, const GeneratorConfig& d) {
  auto four = [&](const char* key, const std::array<int, 4>& fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 4) {
      throw ArgumentError(std::string("generator config: ") + key + " needs exactly 4 entries");
    }
    return v.get<std::array<int, 4>>();
  };
  GeneratorConfig c;
  try {
    c.base_width = j.value("base_width", d.base_width);
    c.block_counts = four("block_counts", d.block_counts);
    c.dilation_plan = four("dilation_plan", d.dilation_plan);
    c.cardinality = j.value("cardinality", d.cardinality);
    c.image_side = j.value("image_side", d.image_side);
    c.feature_channels = j.value("feature_channels", d.feature_channels);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

DiscriminatorConfig DiscriminatorConfig::paper_scale() {
  DiscriminatorConfig c;
  c.base_width = 32;
  c.depth_plan = {64, 128, 256, 512, 512, 512, 512, 512};
  c.cond_channels = 512;
  c.cardinality = 32;
  c.image_side = 512;
  return c;
}

void DiscriminatorConfig::validate() const {
  if (base_width < 1 || cardinality < 1 || cond_channels < 1) {
    throw ArgumentError("discriminator config: widths and cardinality must be positive");
  }
  if (depth_plan.size() < 4) {
    throw ArgumentError("discriminator config: depth_plan needs at least 4 stages to reach stride 16");
  }
  for (int w : depth_plan) {
    if (w < 1) throw ArgumentError("discriminator config: stage widths must be positive");
  }
  if (image_side < 16 || image_side % 16 != 0) {
    throw ArgumentError("discriminator config: image_side must be a positive multiple of 16");
  }
}

nlohmann::json DiscriminatorConfig::to_json() const {
  return {{"base_width", base_width},       {"depth_plan", depth_plan},
          {"cond_channels", cond_channels}, {"cardinality", cardinality},
          {"image_side", image_side}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
  return from_json(j, DiscriminatorConfig{});
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j,
                                                   const DiscriminatorConfig& d) {
  DiscriminatorConfig c;
  try {
    c.base_width = j.value("base_width", d.base_width);
    c.depth_plan = j.value("depth_plan", d.depth_plan);
    c.cond_channels = j.value("cond_channels", d.cond_channels);
    c.cardinality = j.value("cardinality", d.cardinality);
    c.image_side = j.value("image_side", d.image_side);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("discriminator config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Layers

ConvActImpl::ConvActImpl(int in, int out, int kernel, int stride, int dilation, int groups) {
  const int padding = dilation * (kernel - 1) / 2;
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel)
                                                .stride(stride)
                                                .padding(padding)
                                                .dilation(dilation)
                                                .groups(groups)));
  act = register_module("act", nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
}

torch::Tensor ConvActImpl::forward(const torch::Tensor& x) { return act(conv(x)); }

int ResNeXtBlockImpl::bottleneck_width(int width, int cardinality) {
  const int half = std::max(1, width / 2);
  return ((half + cardinality - 1) / cardinality) * cardinality;
}

ResNeXtBlockImpl::ResNeXtBlockImpl(int width, int cardinality, int dilation) {
  const int inner = bottleneck_width(width, cardinality);
  reduce = register_module("reduce", ConvAct(width, inner, 1));
  grouped = register_module("grouped", ConvAct(inner, inner, 3, 1, dilation, cardinality));
  expand = register_module("expand", nn::Conv2d(nn::Conv2dOptions(inner, width, 1)));
  act = register_module("act", nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
}

torch::Tensor ResNeXtBlockImpl::forward(const torch::Tensor& x) {
  return act(x + expand(grouped(reduce(x))));
}

SubNetworkImpl::SubNetworkImpl(int in, int width, int out, int block_count, int cardinality,
                               int dilation) {
  fuse = register_module("fuse", ConvAct(in, width, 3));
  blocks = register_module("blocks", nn::ModuleList());
  for (int i = 0; i < block_count; ++i) {
    blocks->push_back(ResNeXtBlock(width, cardinality, dilation));
  }
  upsample = register_module("upsample", nn::Conv2d(nn::Conv2dOptions(width, out * 4, 3).padding(1)));
  act = register_module("act", nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
}

torch::Tensor SubNetworkImpl::forward(const torch::Tensor& x) {
  auto h = fuse(x);
  for (const auto& block : *blocks) {
    h = block->as<ResNeXtBlockImpl>()->forward(h);
  }
  return act(nets::pixel_shuffle(upsample(h), 2));
}

// ---------------------------------------------------------------------------
// Generator

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  const int b = config_.base_width;
  const int card = config_.cardinality;
  const auto& blocks = config_.block_counts;
  const auto& dil = config_.dilation_plan;
  line_in = register_module("line_in", ConvAct(1, b, 3));
  down1 = register_module("down1", ConvAct(b, 2 * b, 3, 2));
  down2 = register_module("down2", ConvAct(2 * b, 4 * b, 3, 2));
  hint_in = register_module("hint_in", ConvAct(4, 4 * b, 3));
  hint_fuse = register_module("hint_fuse", ConvAct(8 * b, 4 * b, 3));
  down3 = register_module("down3", ConvAct(4 * b, 8 * b, 3, 2));
  down4 = register_module("down4", ConvAct(8 * b, 8 * b, 3, 2));
  sub1 = register_module("sub1", SubNetwork(8 * b + config_.feature_channels, 8 * b, 4 * b, blocks[0], card, dil[0]));
  sub2 = register_module("sub2", SubNetwork(4 * b + 8 * b, 4 * b, 2 * b, blocks[1], card, dil[1]));
  sub3 = register_module("sub3", SubNetwork(2 * b + 4 * b, 4 * b, 2 * b, blocks[2], card, dil[2]));
  sub4 = register_module("sub4", SubNetwork(2 * b + 2 * b, 2 * b, b, blocks[3], card, dil[3]));
  out_conv = register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(2 * b, 3, 3).padding(1)));
  out_act = register_module("out_act", nn::Tanh());
}

namespace {

void check_dim(const char* tensor, const char* dim, std::int64_t got, std::int64_t want) {
  if (got != want) {
    throw ArgumentError(std::string(tensor) + " " + dim + " is " + std::to_string(got) +
                        ", expected " + std::to_string(want));
  }
}

}  // namespace

torch::Tensor GeneratorImpl::forward(const torch::Tensor& line, const torch::Tensor& hints,
                                     const torch::Tensor& features) {
  if (line.dim() != 4 || hints.dim() != 4 || features.dim() != 4) {
    throw ArgumentError("generator inputs must be 4-D (N, C, H, W) tensors");
  }
  const auto n = line.size(0);
  const auto h = line.size(2);
  const auto w = line.size(3);
  check_dim("line art", "channels", line.size(1), 1);
  if (h % 16 != 0 || w % 16 != 0) {
    throw ArgumentError("line art height/width must be divisible by 16, got " + std::to_string(h) +
                        "x" + std::to_string(w));
  }
  check_dim("hints", "batch", hints.size(0), n);
  check_dim("hints", "channels", hints.size(1), 4);
  check_dim("hints", "height", hints.size(2), h / 4);
  check_dim("hints", "width", hints.size(3), w / 4);
  check_dim("features", "batch", features.size(0), n);
  check_dim("features", "channels", features.size(1), config_.feature_channels);
  check_dim("features", "height", features.size(2), h / 16);
  check_dim("features", "width", features.size(3), w / 16);

  auto full = line_in(line);
  auto half = down1(full);
  auto quarter = hint_fuse(torch::cat({down2(half), hint_in(hints)}, 1));
  auto eighth = down3(quarter);
  auto sixteenth = down4(eighth);

  auto up = sub1(torch::cat({sixteenth, features}, 1));
  up = sub2(torch::cat({up, eighth}, 1));
  up = sub3(torch::cat({up, quarter}, 1));
  up = sub4(torch::cat({up, half}, 1));
  return out_act(out_conv(torch::cat({up, full}, 1)));
}

// ---------------------------------------------------------------------------
// Discriminator

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& config) : config_(config) {
  config_.validate();
  const auto& plan = config_.depth_plan;
  stem = register_module("stem", ConvAct(3, config_.base_width, 3));
  pre_stages = register_module("pre_stages", nn::ModuleList());
  post_stages = register_module("post_stages", nn::ModuleList());
  int prev = config_.base_width;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i == 4) {
      cond_fuse = register_module("cond_fuse", ConvAct(prev + config_.cond_channels, prev, 3));
    }
    nn::Sequential stage(ConvAct(prev, plan[i], 3, 2), ResNeXtBlock(plan[i], config_.cardinality, 1));
    (i < 4 ? pre_stages : post_stages)->push_back(stage);
    prev = plan[i];
  }
  if (!cond_fuse) {
    cond_fuse = register_module("cond_fuse", ConvAct(prev + config_.cond_channels, prev, 3));
  }
  head = register_module("head", nn::Linear(prev, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image, const torch::Tensor& features) {
  if (image.dim() != 4 || features.dim() != 4) {
    throw ArgumentError("discriminator inputs must be 4-D (N, C, H, W) tensors");
  }
  check_dim("image", "channels", image.size(1), 3);
  check_dim("features", "batch", features.size(0), image.size(0));
  check_dim("features", "channels", features.size(1), config_.cond_channels);
  if (image.size(2) % 16 != 0 || image.size(3) % 16 != 0) {
    throw ArgumentError("image height/width must be divisible by 16");
  }
  check_dim("features", "height", features.size(2), image.size(2) / 16);
  check_dim("features", "width", features.size(3), image.size(3) / 16);

  auto h = stem(image);
  for (const auto& stage : *pre_stages) {
    h = stage->as<nn::SequentialImpl>()->forward(h);
  }
  h = cond_fuse(torch::cat({h, features}, 1));
  for (const auto& stage : *post_stages) {
    h = stage->as<nn::SequentialImpl>()->forward(h);
  }
  return head(h.mean({2, 3})).squeeze(1);
}

// ---------------------------------------------------------------------------

void initialize_weights(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
  for (auto& m : module.modules(true)) {
    if (auto* conv = m->as<nn::Conv2d>()) {
      const auto& o = conv->options;
      const auto& k = *o.kernel_size();
      const double fan_in = static_cast<double>(o.in_channels() / o.groups()) * k[0] * k[1];
      conv->weight.normal_(0.0, gain / std::sqrt(fan_in), gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* linear = m->as<nn::Linear>()) {
      linear->weight.normal_(0.0, 1.0 / std::sqrt(static_cast<double>(linear->options.in_features())), gen);
      if (linear->bias.defined()) linear->bias.zero_();
    }
  }
  // Without normalization the residual sums grow with depth; damp each branch.
  for (auto& m : module.modules(true)) {
    if (auto* sub = m->as<SubNetworkImpl>()) {
      const auto count = sub->blocks->size();
      for (const auto& block : *sub->blocks) {
        block->as<ResNeXtBlockImpl>()->expand->weight.mul_(1.0 / std::sqrt(static_cast<double>(count)));
      }
    }
  }
}

std::vector<LayerInfo> layer_graph(const torch::nn::Module& module) {
  std::vector<LayerInfo> layers;
  for (const auto& item : module.named_modules("", false)) {
    const auto& m = item.value();
    if (!m->children().empty()) continue;
    LayerInfo info{item.key(), "other", 0.0};
    if (m->as<nn::Conv2d>() || m->as<nn::Conv1d>() || m->as<nn::Conv3d>() ||
        m->as<nn::ConvTranspose2d>()) {
      info.kind = "conv";
    } else if (auto* lrelu = m->as<nn::LeakyReLU>()) {
      info.kind = "leaky_relu";
      info.negative_slope = lrelu->options.negative_slope();
    } else if (m->as<nn::ReLU>()) {
      info.kind = "relu";
    } else if (m->as<nn::Tanh>()) {
      info.kind = "tanh";
    } else if (m->as<nn::Sigmoid>()) {
      info.kind = "sigmoid";
    } else if (m->as<nn::BatchNorm1d>() || m->as<nn::BatchNorm2d>() || m->as<nn::InstanceNorm2d>() ||
               m->as<nn::LayerNorm>() || m->as<nn::GroupNorm>() || m->as<nn::LocalResponseNorm>()) {
      info.kind = "norm";
    } else if (m->as<nn::Linear>()) {
      info.kind = "linear";
    }
    layers.push_back(std::move(info));
  }
  return layers;
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t total = 0;
  for (const auto& p : module.parameters(true)) total += p.numel();
  return total;
}

}  // namespace linecolor::nets
