#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

#include "linecolor/checkpoint.hpp"
#include "linecolor/types.hpp"

namespace linecolor::features {

inline constexpr int kLocalStride = 16;
inline constexpr int kPerceptualStride = 4;

/// Activations plus their spatial reduction relative to the input.
struct FeatureMap {
  torch::Tensor values;
  int stride = 1;
};

/// Six-convolution line-art encoder. Four stride-2 stages bring the input to
/// stride 16; every convolution is followed by ReLU, so outputs are >= 0.
class LocalFeatureNetImpl : public torch::nn::Module {
 public:
  explicit LocalFeatureNetImpl(int channels);
  torch::Tensor forward(const torch::Tensor& line);
  int channels() const { return channels_; }

  torch::nn::ModuleList convs{nullptr};

 private:
  int channels_;
};
TORCH_MODULE(LocalFeatureNet);

/// Four-convolution RGB encoder at stride 4 used for the content loss.
class PerceptualNetImpl : public torch::nn::Module {
 public:
  explicit PerceptualNetImpl(int channels);
  torch::Tensor forward(const torch::Tensor& rgb);
  int channels() const { return channels_; }

  torch::nn::ModuleList convs{nullptr};

 private:
  int channels_;
};
TORCH_MODULE(PerceptualNet);

std::string local_tag(int channels);
std::string perceptual_tag(int channels);

/// Frozen local feature extractor (F1). A default-constructed instance has no
/// weights and refuses to run.
class LocalFeatures {
 public:
  LocalFeatures() = default;
  /// Throws CheckpointError when the tag is not an F1 tag.
  static LocalFeatures from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "");
  /// Wraps a network and freezes it.
  static LocalFeatures from_network(LocalFeatureNet net, std::string tag);

  bool initialized() const { return static_cast<bool>(net_); }
  int channels() const;
  const std::string& tag() const { return tag_; }

  /// (N, 1, H, W) or (1, H, W) line art -> (N, C, H/16, W/16). Gradients with
  /// respect to the input still flow; parameters never receive any.
  torch::Tensor operator()(const torch::Tensor& line) const;
  FeatureMap extract(const LineArt& line) const;

  LocalFeatureNet& network();
  const LocalFeatureNet& network() const;
  /// Writes weights under `prefix` and records the tag in meta[prefix + "tag"].
  void store(Checkpoint& ckpt, const std::string& prefix) const;

 private:
  LocalFeatureNet net_{nullptr};
  std::string tag_;
};

/// Frozen perceptual extractor (F2).
class PerceptualFeatures {
 public:
  PerceptualFeatures() = default;
  static PerceptualFeatures from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "");
  static PerceptualFeatures from_network(PerceptualNet net, std::string tag);

  bool initialized() const { return static_cast<bool>(net_); }
  int channels() const;
  const std::string& tag() const { return tag_; }

  /// (N, 3, H, W) or (3, H, W) image in [-1, 1] -> (N, C, H/4, W/4).
  torch::Tensor operator()(const torch::Tensor& rgb) const;

  PerceptualNet& network();
  const PerceptualNet& network() const;
  void store(Checkpoint& ckpt, const std::string& prefix) const;

 private:
  PerceptualNet net_{nullptr};
  std::string tag_;
};

// ---------------------------------------------------------------------------
// Pretraining

/// Automatic multi-label tags: 6 dominant-hue buckets, 2 saturation buckets
/// and 3 line-density buckets (11 in total).
inline constexpr int kTagCount = 11;
torch::Tensor derive_tags(const TrainingPair& pair);

struct PretrainConfig {
  int channels = 128;
  int side = 64;
  int iterations = 300;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double held_out_fraction = 0.1;
  int eval_every = 50;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kMinPretrainCorpus = 200;

struct PretrainResult {
  Checkpoint checkpoint;
  /// Held-out BCE loss, one entry per evaluation.
  std::vector<double> held_out_loss;
};

/// Trains F1 to predict the tags of each pair from its line art. Throws
/// ArgumentError for corpora smaller than kMinPretrainCorpus.
PretrainResult pretrain_local(const std::vector<TrainingPair>& corpus, const PretrainConfig& config);

/// Trains F2 on the same tags from the colour illustration.
PretrainResult pretrain_perceptual(const std::vector<TrainingPair>& corpus,
                                   const PretrainConfig& config);

/// Spatially averaged features, one row per image: (N, C).
torch::Tensor pooled(const torch::Tensor& feature_maps);

/// Fits a softmax linear classifier on (train_x, train_y) and returns its
/// accuracy on (test_x, test_y). Labels are int64 class indices.
double linear_probe_accuracy(const torch::Tensor& train_x, const torch::Tensor& train_y,
                             const torch::Tensor& test_x, const torch::Tensor& test_y,
                             std::uint64_t seed = 0);

}  // namespace linecolor::features
