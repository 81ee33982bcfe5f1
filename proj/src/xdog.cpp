#include "linecolor/xdog.hpp"

#include <cmath>
#include <string>

#include <torch/torch.h>

#include "linecolor/errors.hpp"

namespace linecolor {

void require_chw(const torch::Tensor& t, std::int64_t channels, const char* what) {
  if (!t.defined() || t.dim() != 3 || t.size(0) != channels) {
    throw ArgumentError(std::string(what) + ": expected a (" + std::to_string(channels) +
                        ", H, W) tensor");
  }
}

void require_nchw(const torch::Tensor& t, std::int64_t channels, const char* what) {
  if (!t.defined() || t.dim() != 4 || t.size(1) != channels) {
    throw ArgumentError(std::string(what) + ": expected a (N, " + std::to_string(channels) +
                        ", H, W) tensor");
  }
}

namespace data {

void XdogParams::validate() const {
  const bool finite = std::isfinite(sigma) && std::isfinite(kappa) && std::isfinite(tau) &&
                      std::isfinite(phi) && std::isfinite(epsilon);
  if (!finite || sigma <= 0.0 || kappa <= 1.0 || phi <= 0.0) {
    throw ArgumentError("invalid XDoG parameters: require sigma > 0, kappa > 1, phi > 0");
  }
}

int reflect_index(int i, int n) {
  if (n == 1) {
    return 0;
  }
  const int period = 2 * n - 2;
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * (k * k) / (sigma * sigma));
    taps[k + radius] = v;
    total += v;
  }
  for (double& v : taps) {
    v /= total;
  }
  return taps;
}

std::vector<double> gaussian_blur(const std::vector<double>& image, int height, int width,
                                  double sigma) {
  const auto taps = gaussian_kernel(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  std::vector<double> rows(image.size());
  for (int y = 0; y < height; ++y) {
    const double* src = &image[static_cast<std::size_t>(y) * width];
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += taps[k + radius] * src[reflect_index(x + k, width)];
      }
      rows[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  std::vector<double> out(image.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += taps[k + radius] * rows[static_cast<std::size_t>(reflect_index(y + k, height)) * width + x];
      }
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  return out;
}

LineArt xdog_filter(const torch::Tensor& grey, const XdogParams& params) {
  params.validate();
  torch::Tensor plane = grey;
  if (plane.dim() == 3) {
    require_chw(plane, 1, "xdog_filter");
    plane = plane[0];
  }
  if (plane.dim() != 2) {
    throw ArgumentError("xdog_filter: expected a (1, H, W) or (H, W) greyscale image");
  }
  plane = plane.to(torch::kFloat64).contiguous();
  if (!torch::isfinite(plane).all().item<bool>()) {
    throw DataValidationError("xdog_filter: input contains non-finite pixels");
  }
  const int height = static_cast<int>(plane.size(0));
  const int width = static_cast<int>(plane.size(1));
  const double* data = plane.data_ptr<double>();
  std::vector<double> image(data, data + plane.numel());

  const auto narrow = gaussian_blur(image, height, width, params.sigma);
  const auto wide = gaussian_blur(image, height, width, params.sigma * params.kappa);

  auto out = torch::empty({1, height, width}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double response = narrow[i] - params.tau * wide[i];
    double v = 1.0;
    if (response < params.epsilon) {
      v = 1.0 + std::tanh(params.phi * (response - params.epsilon));
    }
    dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return LineArt{out};
}

}  // namespace data
}  // namespace linecolor
