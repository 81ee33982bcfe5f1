#pragma once

#include <ATen/core/Generator.h>
#include <torch/types.h>

#include "linecolor/types.hpp"

namespace linecolor::hints {

/// Spatial reduction between an image and its hint tensor.
inline constexpr int kHintStride = 4;

/// Training-time hint threshold xi ~ N(1, variance). The variance reading of
/// N(1, 0.005) gives a standard deviation of sqrt(0.005).
inline constexpr double kXiMean = 1.0;
inline constexpr double kXiVariance = 0.005;

/// Quarter-resolution colour hints. Batched tensors carry a leading N axis.
struct HintTensor {
  torch::Tensor color;  // (3, h, w) in [-1, 1], zero where mask is zero
  torch::Tensor mask;   // (1, h, w) with values in {0, 1}

  /// {color, mask} concatenated along the channel axis.
  torch::Tensor stacked() const;
  /// Splits a (4, h, w) or (N, 4, h, w) tensor back into colour and mask.
  static HintTensor from_stacked(const torch::Tensor& stacked);
  /// All-zero hints for an image of the given full-resolution size.
  static HintTensor empty(std::int64_t height, std::int64_t width);
};

/// User stroke layer, (4, H, W) straight-alpha RGBA in [0, 1]; alpha > 0 marks
/// stroked pixels.
struct StrokeImage {
  torch::Tensor rgba;
};

/// 4x4 average pooling of an RGB image, (3, H, W) or (N, 3, H, W).
torch::Tensor downsample_colors(const torch::Tensor& rgb);

/// Simulated user hints for a batch of illustrations (N, 3, H, W).
///
/// One threshold xi is drawn per item; quarter-resolution pixels whose
/// uniform draw exceeds |xi| are revealed. Returns (N, 4, H/4, W/4).
torch::Tensor sample_training_hints(const torch::Tensor& illustrations,
                                    at::Generator& generator);

/// Single-illustration convenience wrapper.
HintTensor sample_training_hints(const Illustration& y, at::Generator& generator);

/// Converts a stroke layer to hints: 4x max-pooling of alpha, colour taken
/// from the most opaque pixel of each active cell, then checkerboard
/// decimation keeping cells with (i + j) even.
///
/// When `expected_height`/`expected_width` are positive they must match the
/// stroke layer, otherwise ArgumentError is thrown.
HintTensor preprocess_user_strokes(const StrokeImage& strokes, std::int64_t expected_height = 0,
                                   std::int64_t expected_width = 0);

}  // namespace linecolor::hints
