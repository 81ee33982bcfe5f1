#pragma once

#include <string>

#include <torch/types.h>

namespace linecolor {

/// Ground-truth colour image, (3, H, W) float32 in [-1, 1].
struct Illustration {
  torch::Tensor pixels;
  std::string source_id;

  std::int64_t height() const { return pixels.size(1); }
  std::int64_t width() const { return pixels.size(2); }
};

/// Near-binary drawing, (1, H, W) float32 in [0, 1] with 1 = white paper.
struct LineArt {
  torch::Tensor pixels;

  std::int64_t height() const { return pixels.size(1); }
  std::int64_t width() const { return pixels.size(2); }
};

/// A line art and the illustration it was forged from, spatially aligned.
struct TrainingPair {
  LineArt line;
  Illustration color;
};

/// Throws ArgumentError unless `t` is a (channels, H, W) tensor.
void require_chw(const torch::Tensor& t, std::int64_t channels, const char* what);

/// Throws ArgumentError unless `t` is a (N, channels, H, W) tensor.
void require_nchw(const torch::Tensor& t, std::int64_t channels, const char* what);

}  // namespace linecolor
