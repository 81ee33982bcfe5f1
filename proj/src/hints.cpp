#include "linecolor/hints.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <torch/torch.h>

#include "linecolor/errors.hpp"

namespace linecolor::hints {

namespace F = torch::nn::functional;

torch::Tensor HintTensor::stacked() const { return torch::cat({color, mask}, color.dim() - 3); }

HintTensor HintTensor::from_stacked(const torch::Tensor& stacked) {
  const auto axis = stacked.dim() - 3;
  if ((stacked.dim() != 3 && stacked.dim() != 4) || stacked.size(axis) != 4) {
    throw ArgumentError("hint tensor must have 4 channels");
  }
  return HintTensor{stacked.narrow(axis, 0, 3), stacked.narrow(axis, 3, 1)};
}

HintTensor HintTensor::empty(std::int64_t height, std::int64_t width) {
  if (height % kHintStride != 0 || width % kHintStride != 0) {
    throw ArgumentError("image size must be divisible by 4 for hints");
  }
  const auto h = height / kHintStride;
  const auto w = width / kHintStride;
  return HintTensor{torch::zeros({3, h, w}), torch::zeros({1, h, w})};
}

torch::Tensor downsample_colors(const torch::Tensor& rgb) {
  const bool batched = rgb.dim() == 4;
  auto input = batched ? rgb : rgb.unsqueeze(0);
  if (input.size(2) % kHintStride != 0 || input.size(3) % kHintStride != 0) {
    throw ArgumentError("image size must be divisible by 4 for hints");
  }
  auto pooled = F::avg_pool2d(input, F::AvgPool2dFuncOptions(kHintStride).stride(kHintStride));
  return batched ? pooled : pooled.squeeze(0);
}

torch::Tensor sample_training_hints(const torch::Tensor& illustrations, at::Generator& generator) {
  require_nchw(illustrations, 3, "sample_training_hints");
  const auto n = illustrations.size(0);
  auto y_down = downsample_colors(illustrations);
  const auto h = y_down.size(2);
  const auto w = y_down.size(3);
  auto xi = torch::randn({n, 1, 1, 1}, generator, torch::kFloat64)
                .mul_(std::sqrt(kXiVariance))
                .add_(kXiMean);
  auto r = torch::rand({n, 1, h, w}, generator, torch::kFloat64);
  auto mask = r.gt(xi.abs()).to(illustrations.scalar_type());
  return torch::cat({y_down * mask, mask}, 1);
}

HintTensor sample_training_hints(const Illustration& y, at::Generator& generator) {
  require_chw(y.pixels, 3, "sample_training_hints");
  return HintTensor::from_stacked(sample_training_hints(y.pixels.unsqueeze(0), generator)[0]);
}

HintTensor preprocess_user_strokes(const StrokeImage& strokes, std::int64_t expected_height,
                                   std::int64_t expected_width) {
  require_chw(strokes.rgba, 4, "preprocess_user_strokes");
  const auto height = strokes.rgba.size(1);
  const auto width = strokes.rgba.size(2);
  if ((expected_height > 0 && expected_height != height) ||
      (expected_width > 0 && expected_width != width)) {
    throw ArgumentError("stroke layer is " + std::to_string(width) + "x" + std::to_string(height) +
                        " but the line art is " + std::to_string(expected_width) + "x" +
                        std::to_string(expected_height));
  }
  HintTensor out = HintTensor::empty(height, width);
  auto src = strokes.rgba.to(torch::kFloat32).contiguous();
  auto in = src.accessor<float, 3>();
  auto color = out.color.accessor<float, 3>();
  auto mask = out.mask.accessor<float, 3>();
  const auto h = out.mask.size(1);
  const auto w = out.mask.size(2);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      if ((i + j) % 2 != 0) {
        continue;
      }
      float best = 0.0f;
      std::int64_t by = -1;
      std::int64_t bx = -1;
      for (std::int64_t dy = 0; dy < kHintStride; ++dy) {
        for (std::int64_t dx = 0; dx < kHintStride; ++dx) {
          const auto y = i * kHintStride + dy;
          const auto x = j * kHintStride + dx;
          if (in[3][y][x] > best) {
            best = in[3][y][x];
            by = y;
            bx = x;
          }
        }
      }
      if (by < 0) {
        continue;
      }
      mask[0][i][j] = 1.0f;
      for (int c = 0; c < 3; ++c) {
        color[c][i][j] = std::clamp(in[c][by][bx], 0.0f, 1.0f) * 2.0f - 1.0f;
      }
    }
  }
  return out;
}

}  // namespace linecolor::hints
