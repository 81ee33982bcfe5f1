#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "linecolor/image_io.hpp"
#include "linecolor/inference.hpp"
#include "linecolor/manifest.hpp"
#include "support.hpp"

using namespace linecolor;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(LINECOLOR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fixtures::scratch_dir("cli");
    ASSERT_EQ(run("synth --out " + q(root_ / "ill") + " --count 200 --side 72 --seed 3"), 0);
    ASSERT_EQ(run("forge --input " + q(root_ / "ill") + " --output " + q(root_ / "pairs") + " --side 64"), 0);
    ASSERT_EQ(run("pretrain-f1 --data " + q(root_ / "pairs") + " --out " + q(root_ / "ext") +
                  " --channels 32 --side 48 --iterations 10 --batch 8"),
              0);
    nlohmann::json cfg = fixtures::tiny_train_config(2).to_json();
    cfg.erase("f1_checkpoint");
    cfg.erase("f2_checkpoint");
    write_file_atomic(root_ / "train.json", cfg.dump(2));
    ASSERT_EQ(run("train --config " + q(root_ / "train.json") + " --data " + q(root_ / "pairs") + " --out " +
                  q(root_ / "run") + " --f1 " + q(root_ / "ext" / "f1.ckpt") + " --f2 " +
                  q(root_ / "ext" / "f2.ckpt") + " --iterations 4 --drop 2 --checkpoint-every 2"),
              0);
    write_file_atomic(root_ / "line.png", io::encode_grey_png(torch::rand({1, 40, 56})));
  }
  static fs::path root_;
};

fs::path CliPipeline::root_;

}  // namespace

TEST(Cli, HelpExitsZeroForEverySubcommand) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("--version"), 0);
  for (const char* sub : {"forge", "synth", "pretrain-f1", "train", "colorize", "auto-colorize", "fid", "serve"}) {
    EXPECT_EQ(run(std::string(sub) + " --help"), 0) << sub;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("colorize --line x.png"), 2);
  EXPECT_EQ(run("serve --bind nonsense"), 2);
}

TEST_F(CliPipeline, TrainWritesRunArtifacts) {
  for (const char* name : {"ckpt_00000000.ckpt", "ckpt_00000002.ckpt", "ckpt_00000004.ckpt", "latest.ckpt", "metrics.jsonl", "config.json"}) {
    EXPECT_TRUE(fs::exists(root_ / "run" / name)) << name;
  }
  EXPECT_EQ(Checkpoint::load(root_ / "run" / "latest.ckpt").meta().at("iteration"), 4);
  std::ifstream in(root_ / "run" / "metrics.jsonl");
  int lines = 0;
  for (std::string s; std::getline(in, s);) {
    const auto j = nlohmann::json::parse(s);
    EXPECT_DOUBLE_EQ(j.at("lr").get<double>(), lines < 2 ? 1e-4 : 1e-5);
    ++lines;
  }
  EXPECT_EQ(lines, 4);
}

TEST_F(CliPipeline, ResumeContinuesToNewTarget) {
  const auto dir = root_ / "resumed";
  ASSERT_EQ(run("train --data " + q(root_ / "pairs") + " --out " + q(dir) + " --resume " +
                q(root_ / "run" / "ckpt_00000002.ckpt") + " --iterations 5"),
            0);
  EXPECT_EQ(Checkpoint::load(dir / "latest.ckpt").meta().at("iteration"), 5);
}

TEST_F(CliPipeline, ColorizeIsDeterministicAndMatchesLibrary) {
  const auto ckpt = root_ / "run" / "latest.ckpt";
  ASSERT_EQ(run("colorize --line " + q(root_ / "line.png") + " --checkpoint " + q(ckpt) + " --out " +
                q(root_ / "a.png")),
            0);
  ASSERT_EQ(run("colorize --line " + q(root_ / "line.png") + " --checkpoint " + q(ckpt) + " --out " +
                q(root_ / "b.png")),
            0);
  const auto a = slurp(root_ / "a.png");
  EXPECT_EQ(a, slurp(root_ / "b.png"));
  const auto model = inference::ColorModel::load(ckpt, "latest");
  const auto line = io::read_file(root_ / "line.png");
  const auto expected = inference::colorize_png(*model, line, std::nullopt);
  EXPECT_EQ(a, std::string(expected.begin(), expected.end()));
  EXPECT_EQ(io::load_rgb(root_ / "a.png").sizes(), (std::vector<int64_t>{3, 40, 56}));
}

TEST_F(CliPipeline, ColorizeExitCodes) {
  const auto ckpt = root_ / "run" / "latest.ckpt";
  EXPECT_EQ(run("colorize --line " + q(root_ / "missing.png") + " --checkpoint " + q(ckpt) + " --out " +
                q(root_ / "c.png")),
            2);
  EXPECT_EQ(run("colorize --line " + q(root_ / "line.png") + " --checkpoint " + q(root_ / "nope.ckpt") +
                " --out " + q(root_ / "c.png")),
            3);
  EXPECT_EQ(run("colorize --line " + q(root_ / "line.png") + " --checkpoint " + q(root_ / "ext" / "f1.ckpt") +
                " --out " + q(root_ / "c.png")),
            3);
  write_file_atomic(root_ / "junk.png", std::string("junk"));
  EXPECT_EQ(run("colorize --line " + q(root_ / "junk.png") + " --checkpoint " + q(ckpt) + " --out " +
                q(root_ / "c.png")),
            4);
  EXPECT_FALSE(fs::exists(root_ / "c.png"));
}

TEST_F(CliPipeline, AutoColorizeAndFid) {
  const auto lines = root_ / "lines";
  fs::create_directories(lines);
  for (int i = 0; i < 4; ++i) {
    write_file_atomic(lines / ("l" + std::to_string(i) + ".png"), io::encode_grey_png(torch::rand({1, 32, 32})));
  }
  ASSERT_EQ(run("auto-colorize --input " + q(lines) + " --checkpoint " + q(root_ / "run" / "latest.ckpt") +
                " --out " + q(root_ / "auto")),
            0);
  EXPECT_TRUE(fs::exists(root_ / "auto" / "manifest.json"));
  EXPECT_TRUE(fs::exists(root_ / "auto" / "l3_auto.png"));
  ASSERT_EQ(run("fid --set-a " + q(root_ / "auto") + " --set-b " + q(root_ / "auto") + " --embed f2 --extractor " +
                q(root_ / "ext" / "f2.ckpt") + " --out " + q(root_ / "fid.json")),
            0);
  std::ifstream in(root_ / "fid.json");
  const auto report = nlohmann::json::parse(in);
  EXPECT_NEAR(report.at("fid").get<double>(), 0.0, 1e-4);
  EXPECT_EQ(run("fid --set-a " + q(root_ / "auto") + " --set-b " + q(root_ / "auto") +
                " --embed inception --out " + q(root_ / "fid2.json")),
            2);
}
