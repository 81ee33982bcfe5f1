#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/types.h>

namespace linecolor {

/// Versioned binary container for weights and run metadata.
///
/// Layout (little-endian):
///   "LCKPT\0\0\0" | u32 version | u64 header length | header JSON | tensor blobs
/// The header holds the architecture tag, free-form metadata and a tensor
/// index (name, dtype, shape, offset, byte count). Tensors keep insertion
/// order, so load followed by save reproduces the file byte for byte.
class Checkpoint {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  Checkpoint() = default;
  explicit Checkpoint(std::string architecture_tag) : tag_(std::move(architecture_tag)) {}

  const std::string& architecture_tag() const { return tag_; }
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  /// Stores a detached contiguous CPU copy. Replaces an existing entry.
  void put(const std::string& name, const torch::Tensor& tensor);
  bool contains(const std::string& name) const;
  /// Throws CheckpointError when missing.
  const torch::Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, torch::Tensor>>& tensors() const { return tensors_; }

  /// Stores every parameter and buffer of `module` under `prefix`.
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies `prefix`-ed entries into `module`; every parameter and buffer
  /// must be present with a matching shape.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  std::vector<std::uint8_t> to_bytes() const;
  static Checkpoint from_bytes(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Throws CheckpointError unless the tag equals `expected`.
  void require_tag(const std::string& expected) const;

 private:
  std::string tag_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors_;
};

/// FNV-1a over the raw bytes of every parameter, in registration order.
std::uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace linecolor
