#include "ovrcine/outer_volume.hpp"

#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ovrcine {

OvrMask make_ovr_mask(RowInterval roi, Dims dims, int margin)
{
  require_min_dims(dims, "make_ovr_mask");
  if (margin < 0) { throw ConfigError("make_ovr_mask: margin must be >= 0"); }
  if (roi.lo > roi.hi) { throw ConfigError("make_ovr_mask: empty ROI"); }
  RowInterval const grown{roi.lo - margin, roi.hi + margin};
  if (grown.lo < 0 || grown.hi >= dims.n_pe) {
    throw ConfigError("make_ovr_mask: ROI rows [" + std::to_string(grown.lo) + ", " + std::to_string(grown.hi) +
                      "] leave the field of view");
  }
  OvrMask m;
  m.roi_rows = grown;
  m.mask = RealImage::Ones(dims.n_pe, dims.n_fe);
  for (int r = grown.lo; r <= grown.hi; ++r) { m.mask.row(r).setZero(); }
  return m;
}

RoiDetection threshold_roi_detect(std::vector<ComplexImage> const &composites, int R, double threshold)
{
  if (static_cast<int>(composites.size()) < 2 * R) {
    throw ConfigError("threshold_roi_detect: need at least 2R composites");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) { throw ConfigError("threshold_roi_detect: threshold must lie in (0, 1)"); }
  Dims const d = dims_of(composites.front());
  RealImage mean = RealImage::Zero(d.n_pe, d.n_fe);
  double peak_mag = 0.0;
  for (auto const &x : composites) {
    mean += x.abs();
    peak_mag = std::max(peak_mag, x.abs().maxCoeff());
  }
  double const n = static_cast<double>(composites.size());
  mean /= n;
  // Two passes: E[a^2] - E[a]^2 would bury rounding-level variation in cancellation.
  RealImage var = RealImage::Zero(d.n_pe, d.n_fe);
  for (auto const &x : composites) { var += (x.abs() - mean).square(); }
  var /= n;
  Eigen::VectorXd const row_max = var.sqrt().rowwise().maxCoeff().matrix();
  double const peak = row_max.maxCoeff();

  RoiDetection det;
  // Relative floor separates genuine variation from rounding noise.
  if (!(peak > 1e-9 * std::max(peak_mag, 1e-300))) {
    det.fallback = true;
    det.rows = {d.n_pe / 3, 2 * d.n_pe / 3 - 1};
    det.warning = "threshold_roi_detect: no temporal variation found; using the central third of the FOV";
    return det;
  }
  int lo = d.n_pe;
  int hi = -1;
  for (int r = 0; r < d.n_pe; ++r) {
    if (row_max(r) >= threshold * peak) {
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
  }
  det.rows = {lo, hi};
  return det;
}

SampledKSpace subtract_outer_volume(SampledKSpace const &y, CoilImages const &background, OvrMask const &m)
{
  if (static_cast<int>(background.size()) != y.coil_count()) {
    throw ConfigError("subtract_outer_volume: background coil count mismatch");
  }
  SampledKSpace out = y;
  ComplexImage k;
  for (size_t c = 0; c < background.size(); ++c) {
    if (dims_of(background[c]) != m.dims() || m.dims() != Dims{y.n_pe, y.n_fe}) {
      throw ConfigError("subtract_outer_volume: dims mismatch");
    }
    fft2c_into(background[c] * m.mask.cast<cplx>(), k);
    for (size_t j = 0; j < y.lines.size(); ++j) { out.coils[c].row(static_cast<Eigen::Index>(j)) -= k.row(y.lines[j]); }
  }
  return out;
}

CoilSensitivities mask_sensitivities(CoilSensitivities const &sens, OvrMask const &m)
{
  CoilSensitivities out;
  out.masked = true;
  Eigen::Array<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> const keep = m.roi_indicator().cast<cplx>();
  for (auto const &s : sens.maps) {
    if (dims_of(s) != m.dims()) { throw ConfigError("mask_sensitivities: dims mismatch"); }
    out.maps.emplace_back(s * keep);
  }
  return out;
}

ComplexImage compose_final(ComplexImage const &x_ovr, ComplexImage const &background_combined, OvrMask const &m)
{
  if (dims_of(x_ovr) != m.dims() || dims_of(background_combined) != m.dims()) {
    throw ConfigError("compose_final: dims mismatch");
  }
  return x_ovr + background_combined * m.mask.cast<cplx>();
}

} // namespace ovrcine
