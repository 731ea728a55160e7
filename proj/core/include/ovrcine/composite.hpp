#pragma once

#include "ovrcine/encoding.hpp"
#include "ovrcine/image.hpp"
#include "ovrcine/phantom.hpp"
#include "ovrcine/schedule.hpp"

#include <vector>

namespace ovrcine {

// First frame of the R-frame window used for the composite at t0: centered
// ({t0 - floor(R/2), ..., t0 + ceil(R/2) - 1}) and slid inside [0, T).
int composite_window_start(int t0, int R, int T);

// Full k-space per coil merged from the lattice lines of the R window frames.
std::vector<ComplexImage> composite_kspace(KSpaceSeries const &ksp, int t0);

// Composite coil images x_com(t0) = ifft2c(composite_kspace).
CoilImages form_composite(KSpaceSeries const &ksp, int t0);

// Composite for every frame.
std::vector<CoilImages> form_composites(KSpaceSeries const &ksp);

// Per-coil terms of x_com = mean_moving + ghost + background.
struct GhostDecomposition
{
  CoilImages mean_moving;
  CoilImages ghost;
  CoilImages background;
};

// Zero-filled image of frame content `x` sampled on the lattice with offset o at
// rate R, evaluated by the foldover sum
//   (1/R) sum_p exp(2 pi i p (c - o) / R) x[(y + p n/R) mod n],  c = n/2.
// `foldovers` selects which p enter the sum.
enum class Foldovers
{
  All,
  CentralOnly,
  SideOnly,
};
ComplexImage lattice_alias(ComplexImage const &x, int R, int offset, Foldovers which = Foldovers::All);

// Exact decomposition from simulation truth (noiseless only).
//   mean_moving = (1/R) sum_tau s_c moving(tau)
//   background  = (1/R) sum_tau s_c background(tau)
//   ghost       = sum_tau side foldovers (p != 0) of s_c x(tau)
GhostDecomposition decompose_oracle(PhantomTruth const &truth, SamplingSchedule const &sched,
                                    CoilSensitivities const &sens, int t0);
// Same, refusing acquisitions that carry noise.
GhostDecomposition decompose_oracle(PhantomTruth const &truth, KSpaceSeries const &ksp, int t0);

// Reference ghost label at R_high from a lower-rate series:
// composite(retro_undersample(ksp_low, R_high), t0) - TGRAPPA coil images of ksp_low at t0.
CoilImages ghost_reference(KSpaceSeries const &ksp_low, int R_high, int t0);

} // namespace ovrcine
