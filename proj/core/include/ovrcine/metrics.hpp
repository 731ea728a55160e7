#pragma once

#include "ovrcine/image.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ovrcine {

// Reported when est == ref over the region.
inline constexpr double kPsnrCap = 99.0;

// 20 log10(peak |ref| / RMSE(|ref| - |est|)) over all pixels, or over `rows` only.
double psnr(ComplexImage const &ref, ComplexImage const &est, std::optional<RowInterval> rows = std::nullopt);

// Mean local SSIM of magnitude images, both divided by max(ref): 11x11 Gaussian
// window (sigma 1.5), K1 = 0.01, K2 = 0.03, windows fully inside the image.
double ssim(RealImage const &ref, RealImage const &est);

// ||ref - est|| / ||ref|| restricted to rows (all rows when unset).
double nrmse(ComplexImage const &ref, ComplexImage const &est, std::optional<RowInterval> rows = std::nullopt);

// ROI error of the dynamic component: frames minus their temporal mean, compared
// between estimate and truth, ||d_est - d_ref|| / ||d_ref|| over `rows` of all frames.
double temporal_error(FrameSeries const &ref, FrameSeries const &est, RowInterval rows);

struct MetricsRow
{
  int frame = 0;
  std::string method;
  double psnr = 0.0;
  double ssim = 0.0;
  double roi_psnr = 0.0;
};

// Header "frame,method,psnr,ssim,roi_psnr"; numbers printed with 6 decimals.
std::string metrics_csv(std::vector<MetricsRow> const &rows);

} // namespace ovrcine
