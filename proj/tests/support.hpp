#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "linecolor/extractors.hpp"
#include "linecolor/networks.hpp"
#include "linecolor/pipeline.hpp"
#include "linecolor/rng.hpp"
#include "linecolor/synthetic.hpp"
#include "linecolor/trainer.hpp"

namespace linecolor::fixtures {

inline nets::GeneratorConfig tiny_generator(int feature_channels = 32) {
  nets::GeneratorConfig c;
  c.base_width = 8;
  c.block_counts = {1, 1, 1, 1};
  c.cardinality = 4;
  c.image_side = 64;
  c.feature_channels = feature_channels;
  return c;
}

inline nets::DiscriminatorConfig tiny_discriminator(int cond_channels = 32) {
  nets::DiscriminatorConfig c;
  c.base_width = 8;
  c.depth_plan = {8, 16, 32, 32, 32};
  c.cond_channels = cond_channels;
  c.cardinality = 4;
  c.image_side = 64;
  return c;
}

inline features::LocalFeatures random_f1(int channels = 32, std::uint64_t seed = 11) {
  features::LocalFeatureNet net(channels);
  nets::initialize_weights(*net, seed);
  return features::LocalFeatures::from_network(net, features::local_tag(channels));
}

inline features::PerceptualFeatures random_f2(int channels = 32, std::uint64_t seed = 12) {
  features::PerceptualNet net(channels);
  nets::initialize_weights(*net, seed);
  return features::PerceptualFeatures::from_network(net, features::perceptual_tag(channels));
}

/// Synthetic illustrations forged into aligned pairs at `side`.
inline std::vector<TrainingPair> synthetic_pairs(int count, int side, std::uint64_t seed) {
  std::vector<TrainingPair> pairs;
  Rng rng(seed);
  for (const auto& s : data::make_synthetic_corpus(count, side, seed)) {
    pairs.push_back(data::synthesize_pair(s.illustration, rng).pair);
  }
  return pairs;
}

inline train::TrainConfig tiny_train_config(std::uint64_t seed = 5) {
  train::TrainConfig c;
  c.image_side = 64;
  c.batch_size = 2;
  c.total_iterations = 1000;
  c.drop_iteration = 500;
  c.checkpoint_every = 100;
  c.seed = seed;
  c.generator = tiny_generator();
  c.discriminator = tiny_discriminator();
  return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("linecolor_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Central finite-difference relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace linecolor::fixtures
