#include <map>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/manifest.hpp"
#include "linecolor/pipeline.hpp"
#include "linecolor/synthetic.hpp"
#include "support.hpp"

using namespace linecolor;

namespace {

Illustration sample_illustration(int side = 64, int label = 3, std::uint64_t seed = 9) {
  return data::make_synthetic(side, label, seed).illustration;
}

// A pair where the line art is an affine copy of the red channel, so any
// misalignment between the two shows up pixelwise.
TrainingPair coupled_pair(int h, int w) {
  auto color = torch::rand({3, h, w}).mul(1.6).sub(0.8);
  auto line = color.narrow(0, 0, 1).add(1.0).div(2.0);
  return {LineArt{line}, Illustration{color, "coupled"}};
}

}  // namespace

TEST(Pipeline, SigmaDistributionThroughSynthesizePair) {
  const auto ill = sample_illustration(16);
  Rng rng(7);
  std::map<double, int> counts;
  for (int i = 0; i < 3000; ++i) counts[data::synthesize_pair(ill, rng).sigma]++;
  ASSERT_EQ(counts.size(), 3u);
  for (const auto& [sigma, n] : counts) EXPECT_NEAR(n / 3000.0, 1.0 / 3.0, 0.03) << sigma;
}

TEST(Pipeline, SynthesizeIsDeterministicAndShapePreserving) {
  const auto ill = sample_illustration(48);
  Rng a(99), b(99);
  const auto pa = data::synthesize_pair(ill, a);
  const auto pb = data::synthesize_pair(ill, b);
  EXPECT_EQ(pa.sigma, pb.sigma);
  EXPECT_TRUE(torch::equal(pa.pair.line.pixels, pb.pair.line.pixels));
  EXPECT_TRUE(torch::equal(pa.pair.color.pixels, pb.pair.color.pixels));
  EXPECT_EQ(pa.pair.line.pixels.sizes(), (std::vector<int64_t>{1, 48, 48}));
  EXPECT_TRUE(torch::equal(pa.pair.color.pixels, ill.pixels));
}

TEST(Pipeline, DarknessScaleExamples) {
  auto x = torch::tensor({0.0f, 0.5f, 1.0f}).view({1, 1, 3});
  const auto y = data::darkness_scale(LineArt{x}, 0.7).pixels;
  EXPECT_NEAR(y[0][0][0].item<double>(), 0.3, 1e-6);
  EXPECT_NEAR(y[0][0][1].item<double>(), 0.65, 1e-6);
  EXPECT_EQ(y[0][0][2].item<float>(), 1.0f);
  EXPECT_TRUE(torch::equal(data::darkness_scale(LineArt{x}, 1.0).pixels, x));
  EXPECT_THROW(data::darkness_scale(LineArt{x}, 1.2), ArgumentError);
  EXPECT_THROW(data::darkness_scale(LineArt{x}, -0.1), ArgumentError);
}

TEST(Pipeline, DarknessScaleIsMonotoneAndKeepsWhite) {
  auto x = torch::linspace(0, 1, 101).view({1, 1, 101});
  for (double lambda : {0.0, 0.3, 0.7, 0.85, 1.0}) {
    const auto y = data::darkness_scale(LineArt{x}, lambda).pixels.flatten();
    EXPECT_TRUE((y.slice(0, 1) >= y.slice(0, 0, -1)).all().item<bool>());
    EXPECT_EQ(y[100].item<float>(), 1.0f);
    EXPECT_NEAR(y[0].item<double>(), 1.0 - lambda, 1e-6);
  }
}

TEST(Pipeline, AugmentShapesAndAlignment) {
  data::AugmentOptions opt;
  opt.side = 32;
  opt.darkness_min = opt.darkness_max = 1.0;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto pair = coupled_pair(40 + i, 56);
    const auto out = data::augment(pair, rng, opt);
    ASSERT_EQ(out.line.pixels.sizes(), (std::vector<int64_t>{1, 32, 32}));
    ASSERT_EQ(out.color.pixels.sizes(), (std::vector<int64_t>{3, 32, 32}));
    const auto expected = out.color.pixels.narrow(0, 0, 1).add(1.0).div(2.0);
    EXPECT_LT((out.line.pixels - expected).abs().max().item<double>(), 1e-5);
  }
}

TEST(Pipeline, AugmentUpscalesSmallImages) {
  data::AugmentOptions opt;
  opt.side = 64;
  Rng rng(4);
  const auto out = data::augment(coupled_pair(20, 30), rng, opt);
  EXPECT_EQ(out.line.pixels.sizes(), (std::vector<int64_t>{1, 64, 64}));
  EXPECT_EQ(out.color.pixels.sizes(), (std::vector<int64_t>{3, 64, 64}));
}

TEST(Pipeline, FlipRateIsHalf) {
  data::AugmentOptions opt;
  opt.side = 8;
  opt.darkness_min = opt.darkness_max = 1.0;
  auto line = torch::arange(64, torch::kFloat32).div(64).view({1, 8, 8});
  auto color = line.expand({3, 8, 8}).mul(2).sub(1).contiguous();
  const TrainingPair pair{LineArt{line}, Illustration{color, "ramp"}};
  Rng rng(11);
  int flips = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto out = data::augment(pair, rng, opt);
    const bool flipped = torch::allclose(out.line.pixels, line.flip({2}), 0, 1e-6);
    if (flipped) {
      EXPECT_TRUE(torch::allclose(out.color.pixels, color.flip({2}), 0, 1e-6));
      ++flips;
    } else {
      EXPECT_TRUE(torch::allclose(out.line.pixels, line, 0, 1e-6));
    }
  }
  EXPECT_NEAR(flips / 1000.0, 0.5, 0.04);
}

TEST(Pipeline, DarknessAppliedToLineOnly) {
  data::AugmentOptions opt;
  opt.side = 16;
  opt.flip_probability = 0.0;
  opt.darkness_min = opt.darkness_max = 0.7;
  auto line = torch::zeros({1, 16, 16});
  auto color = torch::full({3, 16, 16}, -1.0);
  Rng rng(1);
  const auto out = data::augment({LineArt{line}, Illustration{color, "black"}}, rng, opt);
  EXPECT_NEAR(out.line.pixels.mean().item<double>(), 0.3, 1e-6);
  EXPECT_NEAR(out.color.pixels.mean().item<double>(), -1.0, 1e-6);
}

TEST(Pipeline, ForgeDirectoryIsReproducible) {
  const auto root = fixtures::scratch_dir("forge");
  data::write_synthetic_corpus(root / "in", 6, 72, 1);
  write_file_atomic(root / "in" / "broken.png", std::string_view("not a png"));
  data::ForgeOptions opt;
  opt.side = 48;
  opt.seed = 77;
  const auto m1 = data::forge_directory(root / "in", root / "a", opt);
  const auto m2 = data::forge_directory(root / "in", root / "b", opt);
  EXPECT_EQ(m1["files"].size(), 6u);
  EXPECT_EQ(m1["skipped"].size(), 1u);
  EXPECT_EQ(m1["seed"], 77);
  EXPECT_EQ(m1["files"], m2["files"]);
  for (const auto& f : m1["files"]) {
    for (const char* key : {"line", "color"}) {
      const auto a = io::read_file(root / "a" / f[key].get<std::string>());
      const auto b = io::read_file(root / "b" / f[key].get<std::string>());
      EXPECT_EQ(a, b);
    }
  }
  const auto pairs = data::load_forged_pairs(root / "a");
  ASSERT_EQ(pairs.size(), 6u);
  EXPECT_EQ(pairs[0].line.pixels.size(1), 48);
  EXPECT_EQ(pairs[0].line.pixels.sizes().slice(1), pairs[0].color.pixels.sizes().slice(1));
}

TEST(Pipeline, ItemSeedDependsOnIdAndRunSeed) {
  EXPECT_EQ(data::item_seed(1, "a"), data::item_seed(1, "a"));
  EXPECT_NE(data::item_seed(1, "a"), data::item_seed(1, "b"));
  EXPECT_NE(data::item_seed(1, "a"), data::item_seed(2, "a"));
}

TEST(Pipeline, EmptyDatasetIsRefused) {
  const auto root = fixtures::scratch_dir("forge_empty");
  EXPECT_THROW(data::load_forged_pairs(root), ArgumentError);
}
