#pragma once

#include "ovrcine/encoding.hpp"
#include "ovrcine/image.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace ovrcine {

// Adjoint (zero-filled) reconstruction of frame t.
ComplexImage zero_filled(KSpaceSeries const &ksp, int t);

struct CgConfig
{
  int max_iters = 30;
  double rel_tol = 1e-6;
  double mu = 0.0; // Tikhonov weight
};
void validate(CgConfig const &cfg);

struct CgResult
{
  ComplexImage image;
  int iterations = 0;
  std::vector<double> residuals; // ||r_k|| / ||b||, starting with k = 0
  bool diverged = false;
  std::string diagnostic;
};

// Solves (E^H E + mu I) x = E^H y by conjugate gradient from x = 0. Stops when the
// relative normal-equation residual drops below rel_tol or after max_iters; flags
// (without throwing or stopping) a residual that grows past 10x its running minimum.
// `on_iterate`, when set, sees every iterate x_k (k >= 1).
CgResult cg_sense(SampledKSpace const &y, CoilSensitivities const &sens, CgConfig const &cfg,
                  std::function<void(int, ComplexImage const &)> const &on_iterate = {});

// GRAPPA kernels for a uniform lattice at rate R: each missing offset d = 1..R-1
// is predicted from the 4 nearest lattice rows (s0 - R, s0, s0 + R, s0 + 2R with
// s0 = ky - d) x 5 neighboring columns x all coils.
struct GrappaKernel
{
  static constexpr int kKySpan = 4;
  static constexpr int kKxSpan = 5;

  int R = 1;
  int coils = 0;
  bool periodic = true;
  // weights[d - 1] is (coils * kKySpan * kKxSpan) x coils.
  std::vector<Eigen::MatrixXcd> weights;

  std::size_t weight_count() const;
};

// Least-squares calibration from fully sampled calibration k-space (one block
// per coil, rows are consecutive PE lines). With `periodic`, the block must span
// the whole k-space and neighborhoods wrap around (the DFT grid is periodic).
// Tikhonov weight lambda = 1e-6 * trace(A^H A) / rows(A).
GrappaKernel grappa_calibrate(std::vector<ComplexImage> const &acs, int R, bool periodic = true);

// Fills every non-acquired line of frame `y` (lattice offset `offset`) and
// returns dense per-coil k-space. Acquired lines pass through untouched.
std::vector<ComplexImage> grappa_fill(SampledKSpace const &y, int offset, GrappaKernel const &kernel);

// TGRAPPA: kernel calibrated on the composite k-space at t0, applied to frame t0.
std::vector<ComplexImage> tgrappa_coil_images(KSpaceSeries const &ksp, int t0);
// Sensitivity-weighted coil combination of tgrappa_coil_images.
ComplexImage tgrappa_recon(KSpaceSeries const &ksp, int t0);

} // namespace ovrcine
