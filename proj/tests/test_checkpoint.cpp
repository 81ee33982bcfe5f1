#include <fstream>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "linecolor/checkpoint.hpp"
#include "linecolor/errors.hpp"
#include "linecolor/manifest.hpp"
#include "support.hpp"

using namespace linecolor;

TEST(Checkpoint, BytesRoundTripKeepsOrderAndValues) {
  Checkpoint c("tag-x");
  c.meta()["k"] = 3;
  c.put("b", torch::arange(6, torch::kFloat32).view({2, 3}));
  c.put("a", torch::tensor({1.5, -2.0}, torch::kFloat64));
  c.put("i", torch::tensor({7, 8, 9}, torch::kLong));
  c.put("empty", torch::zeros({0, 4}));
  const auto bytes = c.to_bytes();
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "LCKPT");
  const auto back = Checkpoint::from_bytes(bytes);
  EXPECT_EQ(back.architecture_tag(), "tag-x");
  EXPECT_EQ(back.meta().at("k"), 3);
  ASSERT_EQ(back.tensors().size(), 4u);
  EXPECT_EQ(back.tensors()[0].first, "b");
  EXPECT_TRUE(torch::equal(back.get("b"), c.get("b")));
  EXPECT_EQ(back.get("a").scalar_type(), torch::kFloat64);
  EXPECT_TRUE(torch::equal(back.get("i"), c.get("i")));
  EXPECT_EQ(back.get("empty").sizes(), (std::vector<int64_t>{0, 4}));
  EXPECT_EQ(back.to_bytes(), bytes);
}

TEST(Checkpoint, PutReplacesAndNonContiguousIsCopied) {
  Checkpoint c("t");
  c.put("x", torch::zeros({2}));
  c.put("x", torch::ones({3, 2}).t());
  EXPECT_EQ(c.tensors().size(), 1u);
  EXPECT_EQ(c.get("x").sizes(), (std::vector<int64_t>{2, 3}));
  EXPECT_TRUE(Checkpoint::from_bytes(c.to_bytes()).get("x").is_contiguous());
  EXPECT_THROW(c.get("missing"), CheckpointError);
}

TEST(Checkpoint, CorruptInputsRejected) {
  Checkpoint c("t");
  c.put("x", torch::ones({16}));
  auto bytes = c.to_bytes();
  EXPECT_THROW(Checkpoint::from_bytes(std::span<const std::uint8_t>(bytes.data(), 4)), CheckpointError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(Checkpoint::from_bytes(bad_magic), CheckpointError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(Checkpoint::from_bytes(truncated), CheckpointError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  EXPECT_THROW(Checkpoint::from_bytes(bad_version), CheckpointError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/file.ckpt"), CheckpointError);
  EXPECT_THROW(c.require_tag("other"), CheckpointError);
  EXPECT_NO_THROW(c.require_tag("t"));
}

TEST(Checkpoint, ModuleRoundTripAndShapeChecks) {
  nets::Generator a(fixtures::tiny_generator()), b(fixtures::tiny_generator());
  nets::initialize_weights(*a, 1);
  nets::initialize_weights(*b, 2);
  ASSERT_NE(parameter_hash(*a), parameter_hash(*b));
  Checkpoint c("g");
  c.put_module("g.", *a);
  c.load_module("g.", *b);
  EXPECT_EQ(parameter_hash(*a), parameter_hash(*b));
  nets::Generator wider(fixtures::tiny_generator(16));
  EXPECT_THROW(c.load_module("g.", *wider), CheckpointError);
  EXPECT_THROW(c.load_module("h.", *b), CheckpointError);
}

TEST(Checkpoint, SaveLoadFile) {
  const auto dir = fixtures::scratch_dir("ckpt");
  Checkpoint c("file");
  c.put("w", torch::randn({4, 4}));
  c.save(dir / "x.ckpt");
  const auto back = Checkpoint::load(dir / "x.ckpt");
  EXPECT_TRUE(torch::equal(back.get("w"), c.get("w")));
  EXPECT_EQ(back.to_bytes(), c.to_bytes());
}

TEST(ParameterHash, SensitiveToAnyWeight) {
  nets::Discriminator d(fixtures::tiny_discriminator());
  nets::initialize_weights(*d, 3);
  const auto h = parameter_hash(*d);
  EXPECT_EQ(h, parameter_hash(*d));
  {
    torch::NoGradGuard no_grad;
    d->parameters().back().view(-1)[0] += 1e-3;
  }
  EXPECT_NE(h, parameter_hash(*d));
}
