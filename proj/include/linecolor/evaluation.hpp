#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "linecolor/extractors.hpp"
#include "linecolor/inference.hpp"

namespace linecolor::eval {

/// Gaussian fitted to a set of embeddings. Tensors are float64.
struct GaussianSummary {
  torch::Tensor mean;        // (d)
  torch::Tensor covariance;  // (d, d), unbiased
  std::int64_t n = 0;
  std::string embed_tag;

  std::int64_t dim() const { return mean.size(0); }
  nlohmann::json to_json() const;
};

struct FidResult {
  double value = 0.0;
  std::string embed_tag;
  std::int64_t n_a = 0;
  std::int64_t n_b = 0;
  /// Fraction of eigenvalues clamped from small negatives to zero across
  /// both square-root steps.
  double clamped_fraction = 0.0;

  nlohmann::json to_json() const;
};

/// Maps one (C, H, W) image to a (d) embedding vector.
using Embedder = std::function<torch::Tensor(const torch::Tensor& image)>;

/// Mean and covariance of an (n, d) embedding matrix. Throws ArgumentError
/// for fewer than two rows; warns on stderr when n < d.
GaussianSummary summarize(const torch::Tensor& embeddings, std::string embed_tag);

/// Embeds every image and summarizes. Throws ArgumentError for < 2 images.
GaussianSummary embed_set(const std::vector<torch::Tensor>& images, const Embedder& embed,
                          std::string embed_tag);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}).
/// Throws ArgumentError on a dimension or embed-tag mismatch.
FidResult frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

/// Symmetric PSD square root by eigendecomposition; negative eigenvalues are
/// clamped to zero and counted in `clamped`.
torch::Tensor sqrtm_psd(const torch::Tensor& symmetric, std::int64_t* clamped = nullptr);

/// Spatially pooled F2 features of an RGB image in [-1, 1]. Sides are
/// cropped down to a multiple of 4.
Embedder perceptual_embedder(const features::PerceptualFeatures& f2);
/// Spatially pooled F1 features of an image's luma (RGB) or of a line art
/// (1 channel). Sides are padded with white to a multiple of 16.
Embedder local_embedder(const features::LocalFeatures& f1);

/// Loads precomputed embeddings from `<dir>/embeddings.json`, a JSON array of
/// equal-length number arrays written by an external embedding tool.
torch::Tensor load_external_embeddings(const std::filesystem::path& dir);

/// Loads every PNG/JPEG in a directory as RGB (sorted by name); unreadable
/// files are skipped with a warning.
std::vector<torch::Tensor> load_image_set(const std::filesystem::path& dir);

struct AutoColorizeReport {
  std::vector<std::filesystem::path> outputs;
  std::vector<std::pair<std::filesystem::path, std::string>> skipped;
  nlohmann::json manifest;
};

/// Colorizes each line art with an all-zero hint tensor and writes
/// `<stem>_auto.png` plus `manifest.json` to `output`. Unreadable inputs are
/// skipped with a warning and recorded in the manifest.
AutoColorizeReport auto_colorize_set(const std::vector<std::filesystem::path>& line_arts,
                                     const inference::ColorModel& model,
                                     const std::filesystem::path& output);

}  // namespace linecolor::eval
