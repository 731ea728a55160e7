#pragma once

#include "ovrcine/image.hpp"
#include "ovrcine/random.hpp"

#include <filesystem>
#include <string>

namespace testing {

inline ovrcine::ComplexImage random_image(int rows, int cols, ovrcine::Rng &rng)
{
  ovrcine::ComplexImage x(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) { x(i, j) = {rng.normal(), rng.normal()}; }
  }
  return x;
}

inline double rel_diff(ovrcine::ComplexImage const &a, ovrcine::ComplexImage const &b)
{
  return std::sqrt((a - b).abs2().sum() / std::max(b.abs2().sum(), 1e-300));
}

// Fresh directory under the system temp dir.
inline std::filesystem::path scratch_dir(std::string const &name)
{
  auto dir = std::filesystem::temp_directory_path() / ("ovrcine_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace testing
