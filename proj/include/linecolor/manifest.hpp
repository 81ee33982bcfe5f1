#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace linecolor {

inline constexpr const char* kVersionTag = "linecolor-0.3.0";

/// Writes to `<path>.tmp-<pid>` then renames over `path`, so readers never
/// observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// One record per CLI invocation.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started_at;
  std::string finished_at;
  int exit_code = 0;

  /// FNV-1a of the config's canonical dump, as 16 hex digits.
  std::string config_hash() const;
  nlohmann::json to_json() const;
};

/// Appends the manifest as one JSON line to `<dir>/runs.jsonl`.
void append_run_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

/// UTC timestamp in ISO-8601 with millisecond precision.
std::string utc_timestamp();

}  // namespace linecolor
