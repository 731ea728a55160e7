#pragma once

#include "ovrcine/image.hpp"

#include <filesystem>
#include <vector>

namespace ovrcine {

// 16-bit grayscale PNG of clamp(values, 0, 1).
void write_png16(std::filesystem::path const &path, RealImage const &values);

// Magnitudes placed side by side (1-pixel gaps), all divided by max |first|.
void write_panel(std::filesystem::path const &path, std::vector<ComplexImage> const &images);

} // namespace ovrcine
