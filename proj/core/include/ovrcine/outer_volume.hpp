#pragma once

#include "ovrcine/encoding.hpp"
#include "ovrcine/image.hpp"

#include <string>
#include <vector>

namespace ovrcine {

// Outer-volume mask: 1 on every PE row outside `roi_rows` (all FE columns), 0 on the ROI.
struct OvrMask
{
  RealImage mask;
  RowInterval roi_rows;

  Dims dims() const { return {static_cast<int>(mask.rows()), static_cast<int>(mask.cols())}; }
  RealImage roi_indicator() const { return 1.0 - mask; }
};

// ROI = [roi.lo - margin, roi.hi + margin]; throws when that leaves the FOV.
OvrMask make_ovr_mask(RowInterval roi, Dims dims, int margin);

struct RoiDetection
{
  RowInterval rows;
  bool fallback = false;
  std::string warning;
};

// Per-pixel temporal standard deviation of the composite magnitudes, reduced to
// a per-row maximum and thresholded at `threshold` x peak; returns the tightest
// interval covering every row above threshold. Without temporal variation the
// central third of the FOV is returned with `fallback` set.
RoiDetection threshold_roi_detect(std::vector<ComplexImage> const &composites, int R, double threshold = 0.3);

// y_OVR = y - F^{Omega}(m * background_c) per coil.
SampledKSpace subtract_outer_volume(SampledKSpace const &y, CoilImages const &background, OvrMask const &m);

// Maps zeroed on the outer volume; the result is flagged `masked`.
CoilSensitivities mask_sensitivities(CoilSensitivities const &sens, OvrMask const &m);

// x_OVR + m * background.
ComplexImage compose_final(ComplexImage const &x_ovr, ComplexImage const &background_combined, OvrMask const &m);

} // namespace ovrcine
