#pragma once

#include <vector>

#include <torch/types.h>

#include "linecolor/types.hpp"

namespace linecolor::data {

/// Extended difference-of-Gaussians parameters.
///
/// Response S = G_sigma(I) - tau * G_{kappa*sigma}(I); pixels with
/// S >= epsilon stay white, the rest fall off as 1 + tanh(phi * (S - epsilon)).
/// A very large phi turns the ramp into a hard step.
struct XdogParams {
  double sigma = 0.4;
  double kappa = 4.5;
  double tau = 0.95;
  double phi = 1e9;
  double epsilon = 0.0;

  /// Throws ArgumentError unless sigma > 0, kappa > 1, phi > 0 and all finite.
  void validate() const;
};

/// Normalized 1-D Gaussian taps truncated at radius ceil(3 * sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur of a single-channel (H, W) double image with
/// reflected (mirror, edge not repeated) borders.
std::vector<double> gaussian_blur(const std::vector<double>& image, int height, int width,
                                  double sigma);

/// Mirror index into [0, n) without repeating the edge sample.
int reflect_index(int i, int n);

/// Applies XDoG to a (1, H, W) or (H, W) greyscale image in [0, 1].
/// Throws DataValidationError on non-finite pixels.
LineArt xdog_filter(const torch::Tensor& grey, const XdogParams& params);

}  // namespace linecolor::data
