#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "linecolor/rng.hpp"
#include "linecolor/types.hpp"
#include "linecolor/xdog.hpp"

namespace linecolor::data {

/// Line thicknesses the forge draws from, uniformly.
inline constexpr double kSigmaChoices[3] = {0.3, 0.4, 0.5};

struct ForgedPair {
  TrainingPair pair;
  double sigma = 0.0;
};

/// Forges a line art from the illustration's luma with a randomly drawn
/// sigma. All other XDoG parameters come from `base`.
ForgedPair synthesize_pair(const Illustration& illustration, Rng& rng,
                           const XdogParams& base = {});

/// x' = 1 - lambda * (1 - x). Throws ArgumentError for lambda outside [0, 1].
LineArt darkness_scale(const LineArt& x, double lambda);

struct AugmentOptions {
  int side = 128;
  double darkness_min = 0.7;
  double darkness_max = 1.0;
  double flip_probability = 0.5;
};

/// Bicubic resize so that min(H, W) == side. Aspect ratio is preserved.
torch::Tensor resize_min_side(const torch::Tensor& chw, int side);

/// Joint resize, random crop to side x side, random horizontal flip; the
/// darkness scale is applied to the line art only.
TrainingPair augment(const TrainingPair& pair, Rng& rng, const AugmentOptions& options);

struct ForgeOptions {
  int side = 128;
  std::uint64_t seed = 0;
  XdogParams xdog{};
};

/// Per-item seed derived from the run seed and the item's stable id.
std::uint64_t item_seed(std::uint64_t run_seed, const std::string& source_id);

/// Converts every PNG/JPEG under `input` into `<id>_line.png` / `<id>_color.png`
/// in `output` and writes `manifest.json`. Unreadable files are skipped and
/// listed in the manifest. Returns the manifest.
nlohmann::json forge_directory(const std::filesystem::path& input,
                               const std::filesystem::path& output, const ForgeOptions& options);

/// Loads the pairs listed in a forge manifest. Throws ArgumentError when the
/// directory holds no manifest or lists no pairs.
std::vector<TrainingPair> load_forged_pairs(const std::filesystem::path& dir);

}  // namespace linecolor::data
