#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "linecolor/checkpoint.hpp"
#include "linecolor/extractors.hpp"
#include "linecolor/hints.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/networks.hpp"

namespace linecolor::inference {

/// Pads to the next multiple of `multiple` on the bottom/right with `value`.
torch::Tensor pad_to_multiple(const torch::Tensor& chw, int multiple, double value);

/// What a colorization used internally; filled on request for inspection.
struct ColorizeTrace {
  hints::HintTensor hints;
  std::int64_t padded_height = 0;
  std::int64_t padded_width = 0;
  bool used_strokes = false;
};

/// A trained generator plus its frozen F1, ready for inference. Forward passes
/// are serialized by an internal mutex; everything else is read-only.
class ColorModel {
 public:
  /// Throws CheckpointError for missing/corrupt files or a wrong tag.
  static std::shared_ptr<ColorModel> load(const std::filesystem::path& path, std::string id = "");
  static std::shared_ptr<ColorModel> from_checkpoint(const Checkpoint& ckpt, std::string id);

  const std::string& id() const { return id_; }
  const nets::GeneratorConfig& config() const { return config_; }
  nlohmann::json summary() const;

  /// (1, H, W) line art in [0, 1] and optional (4, H, W) strokes -> (3, H, W)
  /// in [-1, 1]. Pads with white to a multiple of 16 internally; without
  /// strokes every hint is zero.
  torch::Tensor colorize(const torch::Tensor& line,
                         const std::optional<hints::StrokeImage>& strokes = std::nullopt,
                         ColorizeTrace* trace = nullptr) const;

  /// Batched automatic colorization (zero hints) of equally sized line arts.
  torch::Tensor colorize_automatic_batch(const torch::Tensor& lines) const;

 private:
  ColorModel() = default;

  std::string id_;
  nets::GeneratorConfig config_;
  mutable nets::Generator generator_{nullptr};
  mutable features::LocalFeatures f1_;
  std::int64_t iteration_ = 0;
  mutable std::mutex forward_mutex_;
};

/// Shared by the CLI and the HTTP service so both produce identical bytes.
/// Decodes the line art (greyscale or colour) and optional RGBA strokes,
/// checks dimensions, colorizes and encodes the RGB result as PNG.
/// Throws DataValidationError for undecodable input and ArgumentError for a
/// stroke/line-art size mismatch.
io::Bytes colorize_png(const ColorModel& model, std::span<const std::uint8_t> line_art,
                       std::optional<std::span<const std::uint8_t>> strokes,
                       ColorizeTrace* trace = nullptr);

}  // namespace linecolor::inference
