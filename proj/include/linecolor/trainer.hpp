#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <ATen/core/Generator.h>
#include <nlohmann/json.hpp>
#include <torch/optim/adam.h>

#include "linecolor/checkpoint.hpp"
#include "linecolor/extractors.hpp"
#include "linecolor/losses.hpp"
#include "linecolor/networks.hpp"
#include "linecolor/pipeline.hpp"
#include "linecolor/types.hpp"

namespace linecolor::train {

inline constexpr const char* kTrainerTag = "linecolor-trainer-v1";

struct TrainConfig {
  std::string scale = "desk";
  double lr_initial = 1e-4;
  double lr_after_drop = 1e-5;
  std::int64_t drop_iteration = 5000;
  std::int64_t total_iterations = 10000;
  int batch_size = 4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  int image_side = 128;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 1000;
  losses::LossWeights weights{};
  nets::GeneratorConfig generator{};
  nets::DiscriminatorConfig discriminator{};
  std::string f1_checkpoint;
  std::string f2_checkpoint;

  static TrainConfig desk();
  static TrainConfig paper();

  /// Defaults come from the "scale" key ("desk" or "paper"); every other key
  /// overrides. image_side and the conditioning width propagate into both
  /// network configs.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  /// Step schedule: lr_initial before drop_iteration, lr_after_drop from it on.
  double learning_rate(std::int64_t iteration) const;
};

/// One minibatch, all tensors batched along dim 0.
struct Batch {
  torch::Tensor line;      // (N, 1, H, W)
  torch::Tensor hints;     // (N, 4, H/4, W/4)
  torch::Tensor features;  // (N, C_f, H/16, W/16), F1(line)
  torch::Tensor color;     // (N, 3, H, W)
};

struct StepRecord {
  std::int64_t iteration = 0;  // 1-based index of the completed step
  double lr = 0.0;
  losses::LossReport report;
  double d_real = 0.0;  // mean critic score on real images
  double d_fake = 0.0;  // mean critic score on generated images

  nlohmann::json to_json() const;
};

/// Owns G, D, their optimizers and the run's random stream.
class Trainer {
 public:
  Trainer(TrainConfig config, features::LocalFeatures f1, features::PerceptualFeatures f2);

  /// Restores everything including optimizer moments and the random stream.
  static Trainer from_checkpoint(const Checkpoint& ckpt);
  Checkpoint checkpoint() const;

  /// Draws batch_size pairs from `dataset`, augments them, samples hints and
  /// computes F1, consuming only the run's random stream.
  Batch sample_batch(const std::vector<TrainingPair>& dataset);
  /// Builds a batch from already-augmented pairs (hints drawn from the stream).
  Batch make_batch(const std::vector<TrainingPair>& pairs);

  /// One discriminator update followed by one generator update on the same
  /// batch. Throws NonFiniteError (before the offending update) when a loss
  /// is not finite.
  StepRecord train_step(const Batch& batch);

  std::int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }
  nets::Generator& generator() { return generator_; }
  nets::Discriminator& discriminator() { return discriminator_; }
  const features::LocalFeatures& local_features() const { return f1_; }
  const features::PerceptualFeatures& perceptual_features() const { return f2_; }
  at::Generator& random_stream() { return rng_; }

 private:
  void build_optimizers();
  void set_learning_rate(double lr);

  TrainConfig config_;
  features::LocalFeatures f1_;
  features::PerceptualFeatures f2_;
  nets::Generator generator_{nullptr};
  nets::Discriminator discriminator_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  at::Generator rng_;
  std::int64_t iteration_ = 0;
};

struct FitOptions {
  std::filesystem::path out_dir;
  /// Stop once the trainer reaches this iteration (defaults to total_iterations).
  std::int64_t until_iteration = -1;
  std::function<void(const StepRecord&)> on_step;
};

struct FitResult {
  std::vector<StepRecord> records;
  std::filesystem::path last_checkpoint;
  bool aborted = false;
  std::string diagnostic;
};

/// Runs train steps until the target iteration. Appends one JSON line per
/// step to out_dir/metrics.jsonl and writes ckpt_<iteration>.ckpt plus
/// latest.ckpt every checkpoint_every steps and at the end. A non-finite
/// loss stops the run, writes out_dir/diagnostic.json naming the last good
/// checkpoint and returns with aborted = true.
FitResult fit(Trainer& trainer, const std::vector<TrainingPair>& dataset, const FitOptions& options);

}  // namespace linecolor::train
