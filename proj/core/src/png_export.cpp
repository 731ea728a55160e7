#include "ovrcine/png_export.hpp"

#include "ovrcine/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace ovrcine {

void write_png16(std::filesystem::path const &path, RealImage const &values)
{
  if (values.size() == 0) { throw ConfigError("write_png16: empty image"); }
  std::unique_ptr<std::FILE, int (*)(std::FILE *)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) { throw ConfigError("cannot open " + path.string() + " for writing"); }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw NumericalError("libpng initialization failed");
  }
  auto const H = static_cast<png_uint_32>(values.rows());
  auto const W = static_cast<png_uint_32>(values.cols());
  std::vector<png_byte> row(2 * static_cast<size_t>(W));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw NumericalError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, W, H, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 r = 0; r < H; ++r) {
    for (png_uint_32 c = 0; c < W; ++c) {
      double const v = std::clamp(values(r, c), 0.0, 1.0);
      auto const q = static_cast<unsigned>(std::lround(v * 65535.0));
      row[2 * c] = static_cast<png_byte>(q >> 8);
      row[2 * c + 1] = static_cast<png_byte>(q & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_panel(std::filesystem::path const &path, std::vector<ComplexImage> const &images)
{
  if (images.empty()) { throw ConfigError("write_panel: no images"); }
  auto const H = images[0].rows(), W = images[0].cols();
  double peak = images[0].abs().maxCoeff();
  if (peak == 0.0) { peak = 1.0; }
  auto const n = static_cast<Eigen::Index>(images.size());
  RealImage canvas = RealImage::Zero(H, n * W + (n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto const &x = images[static_cast<size_t>(i)];
    if (x.rows() != H || x.cols() != W) { throw ConfigError("write_panel: image dimensions differ"); }
    canvas.block(0, i * (W + 1), H, W) = x.abs() / peak;
  }
  write_png16(path, canvas);
}

} // namespace ovrcine
