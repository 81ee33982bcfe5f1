#include "linecolor/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/manifest.hpp"

namespace linecolor::data {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

ForgedPair synthesize_pair(const Illustration& illustration, Rng& rng, const XdogParams& base) {
  require_chw(illustration.pixels, 3, "synthesize_pair");
  XdogParams params = base;
  params.sigma = kSigmaChoices[rng.integer(0, 2)];
  LineArt line = xdog_filter(io::luma(illustration.pixels), params);
  return ForgedPair{TrainingPair{std::move(line), illustration}, params.sigma};
}

LineArt darkness_scale(const LineArt& x, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ArgumentError("darkness_scale: lambda must lie in [0, 1]");
  }
  return LineArt{1.0 - lambda * (1.0 - x.pixels)};
}

torch::Tensor resize_min_side(const torch::Tensor& chw, int side) {
  if (side <= 0) {
    throw ArgumentError("resize_min_side: side must be positive");
  }
  const auto h = chw.size(1);
  const auto w = chw.size(2);
  const auto shortest = std::min(h, w);
  if (shortest == side) {
    return chw;
  }
  const double scale = static_cast<double>(side) / static_cast<double>(shortest);
  const auto nh = h == shortest ? side : std::max<std::int64_t>(side, std::llround(h * scale));
  const auto nw = w == shortest ? side : std::max<std::int64_t>(side, std::llround(w * scale));
  auto out = F::interpolate(chw.unsqueeze(0).to(torch::kFloat32),
                            F::InterpolateFuncOptions()
                                .size(std::vector<std::int64_t>{nh, nw})
                                .mode(torch::kBicubic)
                                .align_corners(false)
                                .antialias(shortest > side));
  return out.squeeze(0);
}

TrainingPair augment(const TrainingPair& pair, Rng& rng, const AugmentOptions& options) {
  require_chw(pair.line.pixels, 1, "augment (line art)");
  require_chw(pair.color.pixels, 3, "augment (illustration)");
  if (pair.line.height() != pair.color.height() || pair.line.width() != pair.color.width()) {
    throw ArgumentError("augment: line art and illustration are not aligned");
  }
  auto line = resize_min_side(pair.line.pixels, options.side).clamp(0.0, 1.0);
  auto color = resize_min_side(pair.color.pixels, options.side).clamp(-1.0, 1.0);

  const auto top = rng.integer(0, line.size(1) - options.side);
  const auto left = rng.integer(0, line.size(2) - options.side);
  line = line.narrow(1, top, options.side).narrow(2, left, options.side);
  color = color.narrow(1, top, options.side).narrow(2, left, options.side);

  if (rng.bernoulli(options.flip_probability)) {
    line = line.flip({2});
    color = color.flip({2});
  }
  const double lambda = rng.uniform(options.darkness_min, options.darkness_max);
  LineArt scaled = darkness_scale(LineArt{line.contiguous()}, lambda);
  return TrainingPair{LineArt{scaled.pixels.contiguous()},
                      Illustration{color.contiguous(), pair.color.source_id}};
}

std::uint64_t item_seed(std::uint64_t run_seed, const std::string& source_id) {
  return mix_seed(run_seed, fnv1a64(source_id));
}

nlohmann::json forge_directory(const fs::path& input, const fs::path& output,
                               const ForgeOptions& options) {
  options.xdog.validate();
  if (!fs::is_directory(input)) {
    throw ArgumentError("forge: input directory does not exist: " + input.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (entry.is_regular_file() && io::is_image_file(entry.path())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  fs::create_directories(output);

  nlohmann::json manifest;
  manifest["seed"] = options.seed;
  manifest["side"] = options.side;
  manifest["params"] = {{"sigma_choices", kSigmaChoices},
                        {"kappa", options.xdog.kappa},
                        {"tau", options.xdog.tau},
                        {"phi", options.xdog.phi},
                        {"epsilon", options.xdog.epsilon}};
  manifest["files"] = nlohmann::json::array();
  manifest["skipped"] = nlohmann::json::array();

  for (const auto& file : files) {
    const std::string id = file.stem().string();
    torch::Tensor rgb;
    try {
      rgb = io::load_rgb(file);
    } catch (const DataValidationError& e) {
      std::cerr << "forge: skipping " << file << ": " << e.what() << "\n";
      manifest["skipped"].push_back({{"file", file.filename().string()}, {"reason", e.what()}});
      continue;
    }
    Rng rng(item_seed(options.seed, id));
    Illustration illustration{resize_min_side(rgb, options.side).clamp(-1.0, 1.0).contiguous(), id};
    ForgedPair forged = synthesize_pair(illustration, rng, options.xdog);

    const std::string line_name = id + "_line.png";
    const std::string color_name = id + "_color.png";
    write_file_atomic(output / line_name, io::encode_grey_png(forged.pair.line.pixels));
    write_file_atomic(output / color_name, io::encode_rgb_png(forged.pair.color.pixels));
    manifest["files"].push_back({{"id", id},
                                 {"line", line_name},
                                 {"color", color_name},
                                 {"sigma", forged.sigma},
                                 {"height", illustration.height()},
                                 {"width", illustration.width()}});
  }
  write_file_atomic(output / "manifest.json", manifest.dump(2));
  return manifest;
}

std::vector<TrainingPair> load_forged_pairs(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw ArgumentError("dataset manifest not found: " + manifest_path.string());
  }
  std::ifstream in(manifest_path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("malformed dataset manifest " + manifest_path.string() + ": " + e.what());
  }
  std::vector<TrainingPair> pairs;
  for (const auto& item : manifest.value("files", nlohmann::json::array())) {
    TrainingPair p{LineArt{io::load_grey(dir / item.at("line").get<std::string>())},
                   Illustration{io::load_rgb(dir / item.at("color").get<std::string>()),
                                item.at("id").get<std::string>()}};
    if (p.line.height() != p.color.height() || p.line.width() != p.color.width()) {
      throw DataValidationError("dataset pair " + p.color.source_id + " is not aligned");
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) {
    throw ArgumentError("dataset is empty: " + dir.string());
  }
  return pairs;
}

}  // namespace linecolor::data
