#include "linecolor/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/manifest.hpp"
#include "linecolor/rng.hpp"

namespace linecolor::data {

namespace {

// Shape families: 0 circles, 1 boxes, 2 triangles, 3 stripes, 4 rings.
// Classes 0-4 draw large shapes in warm palettes, 5-9 small ones in cool palettes.
cv::Scalar palette_colour(int label, Rng& rng) {
  const bool warm = label < 5;
  const double hue_centre = warm ? 15.0 + 6.0 * label : 100.0 + 8.0 * (label - 5);
  const double hue = std::fmod(hue_centre + rng.uniform(-12.0, 12.0) + 180.0, 180.0);
  const double sat = rng.uniform(90.0, 230.0);
  const double val = rng.uniform(140.0, 250.0);
  cv::Mat hsv(1, 1, CV_8UC3, cv::Scalar(hue, sat, val));
  cv::Mat rgb;
  cv::cvtColor(hsv, rgb, cv::COLOR_HSV2RGB);
  const auto p = rgb.at<cv::Vec3b>(0, 0);
  return {double(p[0]), double(p[1]), double(p[2])};
}

void draw_shape(cv::Mat& img, int family, bool large, Rng& rng, const cv::Scalar& fill, int side) {
  const cv::Scalar outline(20, 20, 20);
  const int thickness = std::max(1, side / 96);
  const cv::Point c(static_cast<int>(rng.integer(0, side - 1)), static_cast<int>(rng.integer(0, side - 1)));
  const int r = large ? static_cast<int>(rng.integer(side / 5, side / 3))
                      : static_cast<int>(rng.integer(side / 14, side / 8));
  switch (family) {
    case 0:
      cv::circle(img, c, r, fill, cv::FILLED, cv::LINE_AA);
      cv::circle(img, c, r, outline, thickness, cv::LINE_AA);
      break;
    case 1: {
      const cv::Rect box(c.x - r, c.y - r / 2, 2 * r, r);
      cv::rectangle(img, box, fill, cv::FILLED, cv::LINE_AA);
      cv::rectangle(img, box, outline, thickness, cv::LINE_AA);
      break;
    }
    case 2: {
      std::vector<cv::Point> tri{{c.x, c.y - r}, {c.x - r, c.y + r}, {c.x + r, c.y + r}};
      cv::fillConvexPoly(img, tri, fill, cv::LINE_AA);
      cv::polylines(img, tri, true, outline, thickness, cv::LINE_AA);
      break;
    }
    case 3: {
      const int w = std::max(2, r / 3);
      const cv::Rect band(0, c.y - w, side, 2 * w);
      cv::rectangle(img, band, fill, cv::FILLED);
      cv::line(img, {0, c.y - w}, {side, c.y - w}, outline, thickness, cv::LINE_AA);
      cv::line(img, {0, c.y + w}, {side, c.y + w}, outline, thickness, cv::LINE_AA);
      break;
    }
    default:
      cv::circle(img, c, r, fill, std::max(2, r / 3), cv::LINE_AA);
      cv::circle(img, c, r + r / 6, outline, thickness, cv::LINE_AA);
      cv::circle(img, c, r - r / 6, outline, thickness, cv::LINE_AA);
      break;
  }
}

}  // namespace

SyntheticImage make_synthetic(int side, int label, std::uint64_t seed) {
  if (side < 8) throw ArgumentError("synthetic side must be at least 8");
  if (label < 0 || label >= kSyntheticClasses) throw ArgumentError("synthetic label out of range");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label) + 1));
  cv::Mat img(side, side, CV_8UC3);
  // Soft vertical background gradient.
  const cv::Scalar top = palette_colour(label, rng) * 0.5 + cv::Scalar(120, 120, 120);
  const cv::Scalar bottom = palette_colour(label, rng) * 0.5 + cv::Scalar(110, 110, 110);
  for (int y = 0; y < side; ++y) {
    const double t = static_cast<double>(y) / (side - 1);
    img.row(y).setTo(top * (1.0 - t) + bottom * t);
  }
  const int family = label % 5;
  const bool large = label < 5;
  const int count = static_cast<int>(large ? rng.integer(2, 4) : rng.integer(6, 10));
  for (int i = 0; i < count; ++i) draw_shape(img, family, large, rng, palette_colour(label, rng), side);

  auto t = torch::from_blob(img.data, {side, side, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32)
               .div(127.5)
               .sub(1.0)
               .contiguous();
  char id[48];
  std::snprintf(id, sizeof(id), "synthetic_c%d_%016llx", label, static_cast<unsigned long long>(seed));
  return {Illustration{t, id}, label};
}

std::vector<SyntheticImage> make_synthetic_corpus(int count, int side, std::uint64_t seed) {
  if (count < 0) throw ArgumentError("synthetic corpus size must be non-negative");
  std::vector<SyntheticImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(make_synthetic(side, i % kSyntheticClasses, mix_seed(seed, static_cast<std::uint64_t>(i))));
  }
  return out;
}

std::vector<std::filesystem::path> write_synthetic_corpus(const std::filesystem::path& dir, int count,
                                                          int side, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  const auto corpus = make_synthetic_corpus(count, side, seed);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "c%d_%05zu.png", corpus[i].label, i);
    const auto path = dir / name;
    write_file_atomic(path, io::encode_rgb_png(corpus[i].illustration.pixels));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace linecolor::data
