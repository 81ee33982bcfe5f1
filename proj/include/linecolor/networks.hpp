#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/activation.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

namespace linecolor::nets {

/// Negative slope of every hidden activation in G and D.
inline constexpr double kLeakySlope = 0.2;

/// Sub-pixel rearrangement: out[c, y*r+dy, x*r+dx] = in[c*r*r + dy*r + dx, y, x].
/// Accepts (C*r*r, h, w) or (N, C*r*r, h, w). Throws ArgumentError when the
/// channel count is not divisible by r*r.
torch::Tensor pixel_shuffle(const torch::Tensor& input, std::int64_t r);

/// Inverse of pixel_shuffle.
torch::Tensor pixel_unshuffle(const torch::Tensor& input, std::int64_t r);

struct GeneratorConfig {
  int base_width = 16;
  std::array<int, 4> block_counts{4, 2, 2, 1};
  std::array<int, 4> dilation_plan{1, 2, 2, 2};
  int cardinality = 16;
  int image_side = 128;
  /// Channels of the local-feature conditioning map.
  int feature_channels = 128;

  static GeneratorConfig paper_scale();
  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
  static GeneratorConfig from_json(const nlohmann::json& j, const GeneratorConfig& defaults);
};

struct DiscriminatorConfig {
  int base_width = 16;
  /// Output widths of the strided stages. The first four bring the image to
  /// stride 16 where the conditioning features join; the rest follow.
  std::vector<int> depth_plan{16, 32, 64, 128, 128, 128};
  int cond_channels = 128;
  int cardinality = 16;
  int image_side = 128;

  static DiscriminatorConfig paper_scale();
  void validate() const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
  static DiscriminatorConfig from_json(const nlohmann::json& j, const DiscriminatorConfig& defaults);
};

/// Convolution followed by LeakyReLU(0.2).
class ConvActImpl : public torch::nn::Module {
 public:
  ConvActImpl(int in, int out, int kernel, int stride = 1, int dilation = 1, int groups = 1);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::LeakyReLU act{nullptr};
};
TORCH_MODULE(ConvAct);

/// Residual block: 1x1 reduce, 3x3 grouped (optionally dilated), 1x1 expand,
/// identity skip, activation after the sum. No normalization.
class ResNeXtBlockImpl : public torch::nn::Module {
 public:
  ResNeXtBlockImpl(int width, int cardinality, int dilation);
  torch::Tensor forward(const torch::Tensor& x);

  /// Bottleneck width: half the block width, rounded up to a multiple of the cardinality.
  static int bottleneck_width(int width, int cardinality);

  ConvAct reduce{nullptr};
  ConvAct grouped{nullptr};
  torch::nn::Conv2d expand{nullptr};
  torch::nn::LeakyReLU act{nullptr};
};
TORCH_MODULE(ResNeXtBlock);

/// Decoder stage: fusion conv, B_n ResNeXt blocks, x2 sub-pixel upsample.
class SubNetworkImpl : public torch::nn::Module {
 public:
  SubNetworkImpl(int in, int width, int out, int blocks, int cardinality, int dilation);
  torch::Tensor forward(const torch::Tensor& x);

  ConvAct fuse{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Conv2d upsample{nullptr};
  torch::nn::LeakyReLU act{nullptr};
};
TORCH_MODULE(SubNetwork);

/// U-Net colorization generator. Inputs: line art (N,1,H,W), hints
/// (N,4,H/4,W/4) and local features (N,C_f,H/16,W/16); output (N,3,H,W) in
/// [-1, 1]. Fully convolutional for any H, W divisible by 16.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);
  torch::Tensor forward(const torch::Tensor& line, const torch::Tensor& hints,
                        const torch::Tensor& features);
  const GeneratorConfig& config() const { return config_; }

  ConvAct line_in{nullptr};
  ConvAct down1{nullptr};
  ConvAct down2{nullptr};
  ConvAct hint_in{nullptr};
  ConvAct hint_fuse{nullptr};
  ConvAct down3{nullptr};
  ConvAct down4{nullptr};
  SubNetwork sub1{nullptr};
  SubNetwork sub2{nullptr};
  SubNetwork sub3{nullptr};
  SubNetwork sub4{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
  torch::nn::Tanh out_act{nullptr};

 private:
  GeneratorConfig config_;
};
TORCH_MODULE(Generator);

/// Conditional critic. Scores (N,3,H,W) images given the local features of
/// their line art; returns (N) unbounded scores.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorConfig& config);
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& features);
  const DiscriminatorConfig& config() const { return config_; }

  ConvAct stem{nullptr};
  torch::nn::ModuleList pre_stages{nullptr};
  ConvAct cond_fuse{nullptr};
  torch::nn::ModuleList post_stages{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  DiscriminatorConfig config_;
};
TORCH_MODULE(Discriminator);

/// Fan-in scaled normal initialization with a local generator. Residual
/// expand convolutions are additionally scaled by 1/sqrt(blocks in their stage).
void initialize_weights(torch::nn::Module& module, std::uint64_t seed);

struct LayerInfo {
  std::string name;
  std::string kind;  // conv, leaky_relu, relu, tanh, sigmoid, norm, linear, other
  double negative_slope = 0.0;
};

/// Leaf layers of a module tree in registration order.
std::vector<LayerInfo> layer_graph(const torch::nn::Module& module);

std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace linecolor::nets
