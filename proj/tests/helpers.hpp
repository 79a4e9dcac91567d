#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "cpgan/imaging.hpp"

namespace testing {

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cpgan_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline cpgan::Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  cpgan::Image im(h, w);
  for (auto& v : im.values()) v = u(rng);
  return im;
}

// Values on a k/256 lattice, so blends are exact in float.
inline cpgan::CopyMask dyadic_mask(int h, int w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 256);
  cpgan::CopyMask m(h, w);
  for (auto& v : m.values()) v = static_cast<float>(u(rng)) / 256.0f;
  return m;
}

inline cpgan::Image dyadic_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 256);
  cpgan::Image im(h, w);
  for (auto& v : im.values()) v = static_cast<float>(u(rng)) / 256.0f;
  return im;
}

}  // namespace testing
