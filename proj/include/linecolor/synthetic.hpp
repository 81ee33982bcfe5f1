#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "linecolor/types.hpp"

namespace linecolor::data {

inline constexpr int kSyntheticClasses = 10;

struct SyntheticImage {
  Illustration illustration;
  int label = 0;
};

/// Procedural flat-shaded illustration with outlined shapes. The class picks
/// the shape family and biases the palette. Deterministic in (seed, label).
SyntheticImage make_synthetic(int side, int label, std::uint64_t seed);

/// `count` images with labels cycling through all classes.
std::vector<SyntheticImage> make_synthetic_corpus(int count, int side, std::uint64_t seed);

/// Writes the corpus as `<class>_<index>.png` files and returns the paths.
std::vector<std::filesystem::path> write_synthetic_corpus(const std::filesystem::path& dir, int count,
                                                          int side, std::uint64_t seed);

}  // namespace linecolor::data
