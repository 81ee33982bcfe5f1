#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <torch/types.h>

namespace linecolor::io {

using Bytes = std::vector<std::uint8_t>;

struct Dimensions {
  int width = 0;
  int height = 0;
};

// Decoders. All throw DataValidationError on undecodable input.

/// RGB (3, H, W) float32 in [-1, 1]. Greyscale inputs are replicated.
torch::Tensor decode_rgb(std::span<const std::uint8_t> bytes);
/// Greyscale (1, H, W) float32 in [0, 1]. Colour inputs are reduced to luma.
torch::Tensor decode_grey(std::span<const std::uint8_t> bytes);
/// Straight-alpha RGBA (4, H, W) float32 in [0, 1]. Missing alpha reads as opaque.
torch::Tensor decode_rgba(std::span<const std::uint8_t> bytes);

torch::Tensor load_rgb(const std::filesystem::path& path);
torch::Tensor load_grey(const std::filesystem::path& path);
torch::Tensor load_rgba(const std::filesystem::path& path);

/// Encodes (3, H, W) in [-1, 1] as an 8-bit RGB PNG.
Bytes encode_rgb_png(const torch::Tensor& rgb);
/// Encodes (1, H, W) in [0, 1] as an 8-bit greyscale PNG.
Bytes encode_grey_png(const torch::Tensor& grey);
/// Encodes (4, H, W) in [0, 1] as an 8-bit straight-alpha RGBA PNG.
Bytes encode_rgba_png(const torch::Tensor& rgba);

/// Reads width/height from a PNG or JPEG header without decoding pixels.
std::optional<Dimensions> peek_dimensions(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);

/// ITU-R BT.601 luma of an RGB image in [-1, 1]; result (1, H, W) in [0, 1].
torch::Tensor luma(const torch::Tensor& rgb);

/// True for extensions the loaders accept (.png, .jpg, .jpeg).
bool is_image_file(const std::filesystem::path& path);

}  // namespace linecolor::io
