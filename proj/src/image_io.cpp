#include "linecolor/image_io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "linecolor/errors.hpp"

namespace linecolor::io {
namespace {

cv::Mat decode_mat(std::span<const std::uint8_t> bytes, int flags) {
  if (bytes.empty()) {
    throw DataValidationError("empty image payload");
  }
  cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1,
                 const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat image;
  try {
    image = cv::imdecode(buffer, flags);
  } catch (const cv::Exception& e) {
    throw DataValidationError(std::string("image decode failed: ") + e.what());
  }
  if (image.empty()) {
    throw DataValidationError("image decode failed: unrecognized or corrupt data");
  }
  if (image.depth() == CV_16U) {
    image.convertTo(image, CV_8U, 1.0 / 257.0);
  }
  return image;
}

// HWC uint8 -> CHW float32 scaled to [0, 1].
torch::Tensor mat_to_unit_tensor(const cv::Mat& mat) {
  cv::Mat contiguous = mat.isContinuous() ? mat : mat.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, contiguous.channels()},
                            torch::kUInt8)
               .clone();
  return t.permute({2, 0, 1}).contiguous().to(torch::kFloat32).div_(255.0);
}

std::uint8_t quantize(float v) {
  float s = std::clamp(v, 0.0f, 1.0f) * 255.0f;
  return static_cast<std::uint8_t>(std::lround(s));
}

Bytes encode_mat(const cv::Mat& mat) {
  std::vector<uchar> out;
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imencode(".png", mat, out, params)) {
    throw DataValidationError("PNG encode failed");
  }
  return Bytes(out.begin(), out.end());
}

// CHW float in [0, 1] -> HWC uint8 mat in OpenCV channel order.
cv::Mat unit_tensor_to_mat(const torch::Tensor& chw) {
  auto t = chw.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  const int c = static_cast<int>(t.size(0));
  const int h = static_cast<int>(t.size(1));
  const int w = static_cast<int>(t.size(2));
  cv::Mat mat(h, w, CV_8UC(c));
  auto acc = t.accessor<float, 3>();
  for (int y = 0; y < h; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        row[x * c + k] = quantize(acc[k][y][x]);
      }
    }
  }
  if (c == 3) {
    cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
  } else if (c == 4) {
    cv::cvtColor(mat, mat, cv::COLOR_RGBA2BGRA);
  }
  return mat;
}

void check_chw(const torch::Tensor& t, std::int64_t channels, const char* what) {
  if (t.dim() != 3 || t.size(0) != channels) {
    throw ArgumentError(std::string(what) + ": expected (" + std::to_string(channels) +
                        ", H, W) tensor");
  }
}

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

}  // namespace

torch::Tensor decode_rgb(std::span<const std::uint8_t> bytes) {
  cv::Mat mat = decode_mat(bytes, cv::IMREAD_COLOR);
  cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
  return mat_to_unit_tensor(mat).mul_(2.0).sub_(1.0);
}

torch::Tensor decode_grey(std::span<const std::uint8_t> bytes) {
  cv::Mat mat = decode_mat(bytes, cv::IMREAD_UNCHANGED);
  if (mat.channels() == 1) {
    return mat_to_unit_tensor(mat);
  }
  // Route colour inputs through the same luma weights the forge uses.
  if (mat.channels() == 4) {
    cv::cvtColor(mat, mat, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
  }
  return luma(mat_to_unit_tensor(mat).mul_(2.0).sub_(1.0));
}

torch::Tensor decode_rgba(std::span<const std::uint8_t> bytes) {
  cv::Mat mat = decode_mat(bytes, cv::IMREAD_UNCHANGED);
  switch (mat.channels()) {
    case 1:
      cv::cvtColor(mat, mat, cv::COLOR_GRAY2RGBA);
      break;
    case 3:
      cv::cvtColor(mat, mat, cv::COLOR_BGR2RGBA);
      break;
    case 4:
      cv::cvtColor(mat, mat, cv::COLOR_BGRA2RGBA);
      break;
    default:
      throw DataValidationError("unsupported channel count in stroke image");
  }
  return mat_to_unit_tensor(mat);
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataValidationError("cannot open " + path.string());
  }
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

torch::Tensor load_rgb(const std::filesystem::path& path) { return decode_rgb(read_file(path)); }
torch::Tensor load_grey(const std::filesystem::path& path) { return decode_grey(read_file(path)); }
torch::Tensor load_rgba(const std::filesystem::path& path) { return decode_rgba(read_file(path)); }

Bytes encode_rgb_png(const torch::Tensor& rgb) {
  check_chw(rgb, 3, "encode_rgb_png");
  return encode_mat(unit_tensor_to_mat(rgb.add(1.0).mul(0.5)));
}

Bytes encode_grey_png(const torch::Tensor& grey) {
  check_chw(grey, 1, "encode_grey_png");
  return encode_mat(unit_tensor_to_mat(grey));
}

Bytes encode_rgba_png(const torch::Tensor& rgba) {
  check_chw(rgba, 4, "encode_rgba_png");
  return encode_mat(unit_tensor_to_mat(rgba));
}

std::optional<Dimensions> peek_dimensions(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 24 && std::equal(kPngSig, kPngSig + 8, bytes.begin()) &&
      std::equal(bytes.begin() + 12, bytes.begin() + 16, "IHDR")) {
    return Dimensions{static_cast<int>(be32(&bytes[16])), static_cast<int>(be32(&bytes[20]))};
  }
  if (bytes.size() >= 4 && bytes[0] == 0xff && bytes[1] == 0xd8) {
    std::size_t pos = 2;
    while (pos + 4 <= bytes.size()) {
      if (bytes[pos] != 0xff) {
        return std::nullopt;
      }
      const std::uint8_t marker = bytes[pos + 1];
      if (marker == 0xff) {
        ++pos;
        continue;
      }
      const std::size_t len = (std::size_t(bytes[pos + 2]) << 8) | bytes[pos + 3];
      const bool sof = marker >= 0xc0 && marker <= 0xcf && marker != 0xc4 && marker != 0xc8 &&
                       marker != 0xcc;
      if (sof && pos + 9 <= bytes.size()) {
        const int h = (bytes[pos + 5] << 8) | bytes[pos + 6];
        const int w = (bytes[pos + 7] << 8) | bytes[pos + 8];
        return Dimensions{w, h};
      }
      pos += 2 + len;
    }
  }
  return std::nullopt;
}

torch::Tensor luma(const torch::Tensor& rgb) {
  check_chw(rgb, 3, "luma");
  auto unit = rgb.add(1.0).mul(0.5);
  auto y = unit[0] * 0.299 + unit[1] * 0.587 + unit[2] * 0.114;
  return y.clamp(0.0, 1.0).unsqueeze(0);
}

bool is_image_file(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace linecolor::io
