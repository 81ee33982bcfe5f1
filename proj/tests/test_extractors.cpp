#include <random>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "linecolor/checkpoint.hpp"
#include "linecolor/errors.hpp"
#include "linecolor/extractors.hpp"
#include "linecolor/synthetic.hpp"
#include "support.hpp"

using namespace linecolor;
using namespace linecolor::features;

namespace {

PretrainConfig quick_config(std::uint64_t seed = 3) {
  PretrainConfig c;
  c.channels = 32;
  c.side = 32;
  c.iterations = 30;
  c.batch_size = 8;
  c.eval_every = 10;
  c.seed = seed;
  return c;
}

const std::vector<TrainingPair>& corpus() {
  static const auto pairs = fixtures::synthetic_pairs(200, 48, 21);
  return pairs;
}

}  // namespace

TEST(Extractors, LocalFeatureShapesAndNonNegativity) {
  const auto f1 = fixtures::random_f1(128);
  const auto out = f1(torch::rand({1, 128, 128}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{128, 8, 8}));
  EXPECT_GE(out.min().item<double>(), 0.0);
  const auto batch = f1(torch::rand({2, 1, 64, 96}));
  EXPECT_EQ(batch.sizes(), (std::vector<int64_t>{2, 128, 4, 6}));
  EXPECT_EQ(f1.extract(LineArt{torch::rand({1, 32, 32})}).stride, 16);
}

TEST(Extractors, PaperScaleLocalFeatureShape) {
  torch::NoGradGuard no_grad;
  const auto f1 = fixtures::random_f1(512);
  const auto out = f1(torch::rand({1, 512, 512}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{512, 32, 32}));
  EXPECT_GE(out.min().item<double>(), 0.0);
}

TEST(Extractors, PerceptualFeatureShape) {
  const auto f2 = fixtures::random_f2(128);
  const auto out = f2(torch::rand({3, 128, 128}) * 2 - 1);
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{128, 32, 32}));
  EXPECT_GE(out.min().item<double>(), 0.0);
}

TEST(Extractors, UninitializedExtractorsRefuse) {
  LocalFeatures f1;
  PerceptualFeatures f2;
  EXPECT_FALSE(f1.initialized());
  EXPECT_THROW(f1(torch::rand({1, 16, 16})), NotInitializedError);
  EXPECT_THROW(f2(torch::rand({3, 16, 16})), NotInitializedError);
}

TEST(Extractors, BadShapesAreArgumentErrors) {
  const auto f1 = fixtures::random_f1(32);
  EXPECT_THROW(f1(torch::rand({1, 30, 32})), ArgumentError);
  EXPECT_THROW(f1(torch::rand({3, 32, 32})), ArgumentError);
}

TEST(Extractors, FrozenParameters) {
  const auto f1 = fixtures::random_f1(32);
  for (const auto& p : f1.network()->parameters()) EXPECT_FALSE(p.requires_grad());
  // Input gradients still flow.
  auto x = torch::rand({1, 1, 32, 32}).requires_grad_(true);
  f1(x).sum().backward();
  EXPECT_TRUE(x.grad().defined());
  for (const auto& p : f1.network()->parameters()) EXPECT_FALSE(p.grad().defined());
}

TEST(Extractors, PerceptualGradientMatchesFiniteDifferences) {
  PerceptualNet net(16);
  nets::initialize_weights(*net, 4);
  net->to(torch::kFloat64);
  const auto f2 = PerceptualFeatures::from_network(net, perceptual_tag(16));
  auto img = (torch::rand({1, 3, 16, 16}, torch::kFloat64) * 2 - 1).requires_grad_(true);
  f2(img).mean().backward();
  const auto grad = img.grad().clone();
  std::mt19937 eng(8);
  const double h = 1e-3;
  for (int k = 0; k < 10; ++k) {
    const int c = eng() % 3, y = eng() % 16, x = eng() % 16;
    auto plus = img.detach().clone();
    auto minus = img.detach().clone();
    plus[0][c][y][x] += h;
    minus[0][c][y][x] -= h;
    const double numeric =
        (f2(plus).mean().item<double>() - f2(minus).mean().item<double>()) / (2 * h);
    EXPECT_LE(fixtures::relative_error(grad[0][c][y][x].item<double>(), numeric, 1e-8), 1e-2)
        << "pixel " << c << "," << y << "," << x;
  }
}

TEST(Extractors, LocalFeaturesTranslationCovariant) {
  torch::NoGradGuard no_grad;
  const auto f1 = fixtures::random_f1(32);
  auto wide = torch::rand({1, 1, 256, 272});
  const auto a = f1(wide.narrow(3, 0, 256));
  const auto b = f1(wide.narrow(3, 16, 256));
  // Receptive field is 65 px; cells 3..12 see no padding in either crop.
  const auto interior_a = a.narrow(2, 3, 10).narrow(3, 4, 10);
  const auto interior_b = b.narrow(2, 3, 10).narrow(3, 3, 10);
  EXPECT_LT((interior_a - interior_b).abs().max().item<double>(), 1e-5);
}

TEST(Extractors, PerceptualFeaturesTranslationCovariant) {
  torch::NoGradGuard no_grad;
  const auto f2 = fixtures::random_f2(32);
  auto wide = torch::rand({1, 3, 64, 68}) * 2 - 1;
  const auto a = f2(wide.narrow(3, 0, 64));
  const auto b = f2(wide.narrow(3, 4, 64));
  const auto interior_a = a.narrow(2, 3, 10).narrow(3, 4, 10);
  const auto interior_b = b.narrow(2, 3, 10).narrow(3, 3, 10);
  EXPECT_LT((interior_a - interior_b).abs().max().item<double>(), 1e-5);
}

TEST(Extractors, LocalFeaturesIgnoreEverythingButTheLineArt) {
  // F1 takes only the line art; the same input gives the same output.
  torch::NoGradGuard no_grad;
  const auto f1 = fixtures::random_f1(32);
  auto x = torch::rand({1, 1, 64, 64});
  EXPECT_TRUE(torch::equal(f1(x), f1(x.clone())));
}

TEST(Extractors, DerivedTagsAreMultiHot) {
  for (const auto& pair : std::vector<TrainingPair>(corpus().begin(), corpus().begin() + 20)) {
    const auto tags = derive_tags(pair);
    ASSERT_EQ(tags.size(0), kTagCount);
    EXPECT_LE(tags.narrow(0, 0, 6).sum().item<double>(), 1.0);
    EXPECT_EQ(tags.narrow(0, 6, 2).sum().item<double>(), 1.0);
    EXPECT_EQ(tags.narrow(0, 8, 3).sum().item<double>(), 1.0);
  }
}

TEST(Extractors, PretrainRefusesSmallCorpus) {
  const std::vector<TrainingPair> small(corpus().begin(), corpus().begin() + 199);
  EXPECT_THROW(pretrain_local(small, quick_config()), ArgumentError);
  EXPECT_THROW(pretrain_perceptual(small, quick_config()), ArgumentError);
}

TEST(Extractors, PretrainIsDeterministicAndLearns) {
  auto cfg = quick_config();
  cfg.iterations = 60;
  const auto a = pretrain_local(corpus(), cfg);
  const auto b = pretrain_local(corpus(), cfg);
  ASSERT_EQ(a.held_out_loss.size(), 6u);
  EXPECT_EQ(a.held_out_loss, b.held_out_loss);
  EXPECT_EQ(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
  EXPECT_LT(a.held_out_loss.back(), a.held_out_loss.front());
  EXPECT_EQ(a.checkpoint.architecture_tag(), local_tag(32));
  EXPECT_TRUE(a.checkpoint.meta().contains("training_manifest"));
}

TEST(Extractors, CheckpointRoundTripIsBitIdentical) {
  const auto result = pretrain_perceptual(corpus(), quick_config());
  const auto bytes = result.checkpoint.to_bytes();
  const auto reloaded = Checkpoint::from_bytes(bytes);
  EXPECT_EQ(reloaded.to_bytes(), bytes);
  const auto f2 = PerceptualFeatures::from_checkpoint(reloaded);
  Checkpoint again(f2.tag());
  f2.store(again, "");
  for (const auto& [name, tensor] : again.tensors()) {
    EXPECT_TRUE(torch::equal(tensor, reloaded.get(name))) << name;
  }
  EXPECT_THROW(LocalFeatures::from_checkpoint(reloaded), CheckpointError);
}

TEST(Extractors, LinearProbeBeatsChanceOnTenClasses) {
  auto cfg = quick_config(5);
  cfg.side = 48;
  cfg.iterations = 150;
  const auto f1 = LocalFeatures::from_checkpoint(pretrain_local(corpus(), cfg).checkpoint);
  // Fresh labelled images, 10 classes.
  const auto train_set = data::make_synthetic_corpus(300, 48, 901);
  const auto test_set = data::make_synthetic_corpus(100, 48, 902);
  auto embed = [&](const std::vector<data::SyntheticImage>& set, torch::Tensor& x, torch::Tensor& y) {
    torch::NoGradGuard no_grad;
    Rng rng(1);
    std::vector<torch::Tensor> lines;
    std::vector<std::int64_t> labels;
    for (const auto& s : set) {
      lines.push_back(data::synthesize_pair(s.illustration, rng).pair.line.pixels);
      labels.push_back(s.label);
    }
    x = pooled(f1(torch::stack(lines)));
    y = torch::tensor(labels, torch::kLong);
  };
  torch::Tensor xtr, ytr, xte, yte;
  embed(train_set, xtr, ytr);
  embed(test_set, xte, yte);
  const double acc = linear_probe_accuracy(xtr, ytr, xte, yte);
  EXPECT_GT(acc, 0.30) << "probe accuracy " << acc;
}
