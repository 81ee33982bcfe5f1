#include "linecolor/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/manifest.hpp"

namespace linecolor::eval {

namespace fs = std::filesystem;

nlohmann::json GaussianSummary::to_json() const {
  return {{"dim", dim()}, {"n", n}, {"embed_tag", embed_tag}};
}

nlohmann::json FidResult::to_json() const {
  return {{"fid", value},   {"embed_tag", embed_tag},
          {"n_a", n_a},     {"n_b", n_b},
          {"clamped_eigenvalue_fraction", clamped_fraction}};
}

GaussianSummary summarize(const torch::Tensor& embeddings, std::string embed_tag) {
  if (embeddings.dim() != 2) throw ArgumentError("embeddings must be an (n, d) matrix");
  const auto n = embeddings.size(0);
  const auto d = embeddings.size(1);
  if (n < 2) throw ArgumentError("at least 2 images are required to fit a Gaussian");
  if (n < d) {
    std::cerr << "warning: " << n << " samples for a " << d
              << "-dimensional embedding; covariance is rank deficient\n";
  }
  auto x = embeddings.to(torch::kFloat64);
  auto mean = x.mean(0);
  auto centered = x - mean;
  auto cov = centered.t().matmul(centered) / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.t());
  return GaussianSummary{mean, cov, n, std::move(embed_tag)};
}

GaussianSummary embed_set(const std::vector<torch::Tensor>& images, const Embedder& embed,
                          std::string embed_tag) {
  if (images.size() < 2) throw ArgumentError("embed_set needs at least 2 images");
  std::vector<torch::Tensor> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(embed(img).to(torch::kFloat64).flatten());
  return summarize(torch::stack(rows), std::move(embed_tag));
}

torch::Tensor sqrtm_psd(const torch::Tensor& symmetric, std::int64_t* clamped) {
  auto [values, vectors] = torch::linalg_eigh(symmetric.to(torch::kFloat64));
  if (clamped) *clamped += values.lt(0.0).sum().item<std::int64_t>();
  auto root = values.clamp_min(0.0).sqrt();
  return vectors.matmul(torch::diag(root)).matmul(vectors.t());
}

FidResult frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dim() != b.dim()) {
    throw ArgumentError("Gaussian summaries differ in dimension (" + std::to_string(a.dim()) +
                        " vs " + std::to_string(b.dim()) + ")");
  }
  if (a.embed_tag != b.embed_tag) {
    throw ArgumentError("summaries come from different embeddings ('" + a.embed_tag + "' vs '" +
                        b.embed_tag + "')");
  }
  std::int64_t clamped = 0;
  auto root_a = sqrtm_psd(a.covariance, &clamped);
  auto inner = root_a.matmul(b.covariance.to(torch::kFloat64)).matmul(root_a);
  inner = 0.5 * (inner + inner.t());
  auto [values, vectors] = torch::linalg_eigh(inner);
  clamped += values.lt(0.0).sum().item<std::int64_t>();
  const double trace_root = values.clamp_min(0.0).sqrt().sum().item<double>();

  const double mean_term = (a.mean - b.mean).pow(2).sum().item<double>();
  const double trace_term =
      a.covariance.trace().item<double>() + b.covariance.trace().item<double>() - 2.0 * trace_root;

  FidResult r;
  r.value = mean_term + trace_term;
  r.embed_tag = a.embed_tag;
  r.n_a = a.n;
  r.n_b = b.n;
  r.clamped_fraction = static_cast<double>(clamped) / static_cast<double>(2 * a.dim());
  return r;
}

Embedder perceptual_embedder(const features::PerceptualFeatures& f2) {
  return [f2](const torch::Tensor& image) {
    torch::NoGradGuard no_grad;
    require_chw(image, 3, "perceptual embedder");
    const auto h = image.size(1) - image.size(1) % features::kPerceptualStride;
    const auto w = image.size(2) - image.size(2) % features::kPerceptualStride;
    return features::pooled(f2(image.narrow(1, 0, h).narrow(2, 0, w)))[0];
  };
}

Embedder local_embedder(const features::LocalFeatures& f1) {
  return [f1](const torch::Tensor& image) {
    torch::NoGradGuard no_grad;
    auto line = image.size(0) == 3 ? io::luma(image) : image;
    require_chw(line, 1, "local embedder");
    return features::pooled(f1(inference::pad_to_multiple(line, features::kLocalStride, 1.0)))[0];
  };
}

torch::Tensor load_external_embeddings(const fs::path& dir) {
  const auto path = dir / "embeddings.json";
  std::ifstream in(path);
  if (!in) throw ArgumentError("external embeddings not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataValidationError("malformed " + path.string() + ": " + e.what());
  }
  std::vector<torch::Tensor> rows;
  for (const auto& row : j) {
    rows.push_back(torch::tensor(row.get<std::vector<double>>(), torch::kFloat64));
  }
  if (rows.empty()) throw ArgumentError("no embeddings in " + path.string());
  try {
    return torch::stack(rows);
  } catch (const c10::Error&) {
    throw DataValidationError("embeddings in " + path.string() + " differ in length");
  }
}

std::vector<torch::Tensor> load_image_set(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ArgumentError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && io::is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<torch::Tensor> images;
  for (const auto& f : files) {
    try {
      images.push_back(io::load_rgb(f));
    } catch (const DataValidationError& e) {
      std::cerr << "warning: skipping " << f << ": " << e.what() << "\n";
    }
  }
  return images;
}

AutoColorizeReport auto_colorize_set(const std::vector<fs::path>& line_arts,
                                     const inference::ColorModel& model, const fs::path& output) {
  fs::create_directories(output);
  AutoColorizeReport report;
  report.manifest = {{"model", model.summary()},
                     {"hints", "none"},
                     {"outputs", nlohmann::json::array()},
                     {"skipped", nlohmann::json::array()}};
  for (const auto& path : line_arts) {
    torch::Tensor line;
    try {
      line = io::load_grey(path);
    } catch (const DataValidationError& e) {
      std::cerr << "warning: skipping " << path << ": " << e.what() << "\n";
      report.skipped.emplace_back(path, e.what());
      report.manifest["skipped"].push_back({{"input", path.string()}, {"reason", e.what()}});
      continue;
    }
    const auto out_path = output / (path.stem().string() + "_auto.png");
    write_file_atomic(out_path, io::encode_rgb_png(model.colorize(line)));
    report.outputs.push_back(out_path);
    report.manifest["outputs"].push_back({{"input", path.string()}, {"output", out_path.string()}});
  }
  write_file_atomic(output / "manifest.json", report.manifest.dump(2));
  return report;
}

}  // namespace linecolor::eval
