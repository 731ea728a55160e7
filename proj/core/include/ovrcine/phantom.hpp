#pragma once

#include "ovrcine/encoding.hpp"
#include "ovrcine/image.hpp"
#include "ovrcine/schedule.hpp"

#include <cstdint>

namespace ovrcine {

// Synthetic short-axis scene: a contracting bright disk ("heart") with two dark
// papillary dots inside a large elliptical body whose border carries a bright
// fat-like rim. Everything outside the disk is static unless drift is enabled.
struct PhantomConfig
{
  int n_pe = 64;
  int n_fe = 64;
  int T = 48;
  double heart_row = 32.0;
  double heart_col = 34.0;
  double r0 = 9.0;             // base radius, pixels
  double contraction = 0.3;    // a in r(t) = r0 (1 + a sin(2 pi t / P))
  double period = 12.0;        // frames per cardiac cycle
  double rim_intensity = 3.0;  // rim brightness relative to the body interior
  double drift_amplitude = 0.0; // PE-direction background drift, pixels
  double frame_period = 0.05;  // seconds, metadata only
  std::uint64_t seed = 1;
};

struct PhantomTruth
{
  FrameSeries frames;
  FrameSeries moving;
  ComplexImage stationary;   // background at t = 0 (the whole background when drift = 0)
  FrameSeries background;    // per-frame background; equals `stationary` everywhere when drift = 0
  RowInterval roi_rows;
};

// Margin (pixels) added around the maximal heart extent for roi_rows.
inline constexpr int kRoiMargin = 2;

double heart_radius(PhantomConfig const &cfg, double t);

// Body geometry shared with tests: normalized elliptical radius and the rim band.
struct BodyGeometry
{
  double center_row, center_col, semi_rows, semi_cols, rim_width; // rim_width in normalized radius
  double rho(double row, double col) const;
};
BodyGeometry body_geometry(PhantomConfig const &cfg);

void validate(PhantomConfig const &cfg);

PhantomTruth make_phantom(PhantomConfig const &cfg);

// C Gaussian coils around the FOV border with smooth linear phase, normalized so
// that sum_c |s_c|^2 = 1 on every pixel.
CoilSensitivities make_coil_maps(int C, Dims dims);

// y(t) = E_t x(t) + circular complex white noise with per-sample std sigma.
KSpaceSeries simulate_acquisition(PhantomTruth const &truth, CoilSensitivities const &sens,
                                  SamplingSchedule const &sched, double noise_sigma, std::uint64_t seed);

// Noise level giving the requested k-space SNR, 20 log10(rms(signal) / sigma),
// measured over the acquired samples of the noiseless series.
double noise_sigma_for_snr(PhantomTruth const &truth, CoilSensitivities const &sens,
                           SamplingSchedule const &sched, double snr_db);

} // namespace ovrcine
