#include "linecolor/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/manifest.hpp"

namespace linecolor {
namespace {

constexpr char kMagic[8] = {'L', 'C', 'K', 'P', 'T', 0, 0, 0};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw CheckpointError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  throw CheckpointError("unknown tensor dtype '" + name + "'");
}

template <typename T>
void append_pod(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + sizeof(T) > bytes.size()) {
    throw CheckpointError("truncated checkpoint");
  }
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

void Checkpoint::put(const std::string& name, const torch::Tensor& tensor) {
  auto copy = tensor.detach().to(torch::kCPU).contiguous().clone();
  for (auto& [key, value] : tensors_) {
    if (key == name) {
      value = copy;
      return;
    }
  }
  tensors_.emplace_back(name, copy);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [key, value] : tensors_) {
    if (key == name) return true;
  }
  return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [key, value] : tensors_) {
    if (key == name) return value;
  }
  throw CheckpointError("checkpoint '" + tag_ + "' has no tensor '" + name + "'");
}

void Checkpoint::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(true)) {
    put(prefix + item.key(), item.value());
  }
  for (const auto& item : module.named_buffers(true)) {
    put(prefix + item.key(), item.value());
  }
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& key, torch::Tensor& target) {
    const auto& source = get(prefix + key);
    if (source.sizes() != target.sizes()) {
      throw CheckpointError("shape mismatch for '" + prefix + key + "' in checkpoint '" + tag_ + "'");
    }
    target.copy_(source);
  };
  for (auto& item : module.named_parameters(true)) {
    assign(item.key(), item.value());
  }
  for (auto& item : module.named_buffers(true)) {
    assign(item.key(), item.value());
  }
}

std::vector<std::uint8_t> Checkpoint::to_bytes() const {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const std::uint64_t nbytes = t.numel() * t.element_size();
    index.push_back({{"name", name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json header{{"architecture_tag", tag_}, {"meta", meta_}, {"tensors", index}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
  append_pod<std::uint32_t>(out, kFormatVersion);
  append_pod<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors_) {
    const auto* p = static_cast<const std::uint8_t*>(t.data_ptr());
    out.insert(out.end(), p, p + t.numel() * t.element_size());
  }
  return out;
}

Checkpoint Checkpoint::from_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a linecolor checkpoint (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(bytes, 8);
  if (version != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(bytes, 12);
  const std::size_t body = 20 + header_len;
  if (body > bytes.size()) {
    throw CheckpointError("truncated checkpoint header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + body);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Checkpoint ckpt(header.at("architecture_tag").get<std::string>());
  ckpt.meta_ = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (body + offset + nbytes > bytes.size()) {
      throw CheckpointError("truncated tensor blob '" + entry.at("name").get<std::string>() + "'");
    }
    auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw CheckpointError("tensor size mismatch for '" + entry.at("name").get<std::string>() + "'");
    }
    std::memcpy(t.data_ptr(), bytes.data() + body + offset, nbytes);
    ckpt.tensors_.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_bytes());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw CheckpointError("checkpoint not found: " + path.string());
  }
  return from_bytes(io::read_file(path));
}

void Checkpoint::require_tag(const std::string& expected) const {
  if (tag_ != expected) {
    throw CheckpointError("checkpoint architecture '" + tag_ + "' does not match expected '" +
                          expected + "'");
  }
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : module.parameters(true)) {
    auto t = p.detach().to(torch::kCPU).contiguous();
    const auto* data = static_cast<const std::uint8_t*>(t.data_ptr());
    for (std::int64_t i = 0; i < t.numel() * static_cast<std::int64_t>(t.element_size()); ++i) {
      h ^= data[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace linecolor
