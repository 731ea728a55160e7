#include "ovrcine/composite.hpp"

#include "ovrcine/classical.hpp"
#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ovrcine {

int composite_window_start(int t0, int R, int T)
{
  if (T < R) { throw ConfigError("composite: need T >= R (T=" + std::to_string(T) + ", R=" + std::to_string(R) + ")"); }
  if (t0 < 0 || t0 >= T) { throw ConfigError("composite: frame index out of range"); }
  return std::clamp(t0 - R / 2, 0, T - R);
}

std::vector<ComplexImage> composite_kspace(KSpaceSeries const &ksp, int t0)
{
  auto const &s = ksp.schedule;
  int const R = s.R;
  int const start = composite_window_start(t0, R, ksp.size());
  Dims const d = ksp.dims();
  int const C = ksp.sensitivities.coils();
  std::vector<ComplexImage> full(static_cast<size_t>(C), ComplexImage::Zero(d.n_pe, d.n_fe));
  std::vector<int> owner(static_cast<size_t>(d.n_pe), -1);
  for (int tau = start; tau < start + R; ++tau) {
    auto const &fr = ksp[tau];
    for (size_t j = 0; j < fr.lines.size(); ++j) {
      int const k = fr.lines[j];
      if (!s.on_lattice(tau, k)) { continue; } // extra center lines belong to other frames' lattices
      if (owner[static_cast<size_t>(k)] != -1) { throw NumericalError("composite: PE line sampled twice in window"); }
      owner[static_cast<size_t>(k)] = tau;
      for (int c = 0; c < C; ++c) { full[static_cast<size_t>(c)].row(k) = fr.coils[static_cast<size_t>(c)].row(static_cast<Eigen::Index>(j)); }
    }
  }
  for (int k = 0; k < d.n_pe; ++k) {
    if (owner[static_cast<size_t>(k)] == -1) {
      throw NumericalError("composite: PE line " + std::to_string(k) + " missing from window at t0=" + std::to_string(t0));
    }
  }
  return full;
}

CoilImages form_composite(KSpaceSeries const &ksp, int t0)
{
  auto k = composite_kspace(ksp, t0);
  CoilImages out;
  out.reserve(k.size());
  for (auto const &kc : k) { out.push_back(ifft2c(kc)); }
  return out;
}

std::vector<CoilImages> form_composites(KSpaceSeries const &ksp)
{
  std::vector<CoilImages> out;
  out.reserve(static_cast<size_t>(ksp.size()));
  for (int t = 0; t < ksp.size(); ++t) { out.push_back(form_composite(ksp, t)); }
  return out;
}

ComplexImage lattice_alias(ComplexImage const &x, int R, int offset, Foldovers which)
{
  int const n = static_cast<int>(x.rows());
  if (R < 1 || n % R != 0) { throw ConfigError("lattice_alias: R must divide n_pe"); }
  int const step = n / R;
  int const c = n / 2;
  ComplexImage out = ComplexImage::Zero(x.rows(), x.cols());
  for (int p = 0; p < R; ++p) {
    if ((which == Foldovers::CentralOnly && p != 0) || (which == Foldovers::SideOnly && p == 0)) { continue; }
    // Reduce the exponent mod R before forming the phase so the roots of unity are exact-ish.
    long const e = ((static_cast<long>(p) * (c - offset)) % R + R) % R;
    cplx const phase = std::polar(1.0 / R, 2.0 * std::numbers::pi * static_cast<double>(e) / R);
    for (int y = 0; y < n; ++y) { out.row(y) += phase * x.row((y + p * step) % n); }
  }
  return out;
}

GhostDecomposition decompose_oracle(PhantomTruth const &truth, SamplingSchedule const &sched,
                                    CoilSensitivities const &sens, int t0)
{
  int const R = sched.R;
  int const T = truth.frames.size();
  if (sched.frames() != T) { throw ConfigError("decompose_oracle: schedule/phantom frame count mismatch"); }
  int const start = composite_window_start(t0, R, T);
  Dims const d = truth.frames.dims();
  GhostDecomposition g;
  for (int c = 0; c < sens.coils(); ++c) {
    ComplexImage mean_moving = ComplexImage::Zero(d.n_pe, d.n_fe);
    ComplexImage background = ComplexImage::Zero(d.n_pe, d.n_fe);
    ComplexImage ghost = ComplexImage::Zero(d.n_pe, d.n_fe);
    for (int tau = start; tau < start + R; ++tau) {
      ComplexImage const frame = sens[c] * truth.frames[tau];
      mean_moving += sens[c] * truth.moving[tau] / static_cast<double>(R);
      background += sens[c] * truth.background[tau] / static_cast<double>(R);
      ghost += lattice_alias(frame, R, sched.offset(tau), Foldovers::SideOnly);
    }
    g.mean_moving.push_back(std::move(mean_moving));
    g.background.push_back(std::move(background));
    g.ghost.push_back(std::move(ghost));
  }
  return g;
}

GhostDecomposition decompose_oracle(PhantomTruth const &truth, KSpaceSeries const &ksp, int t0)
{
  if (ksp.noise_sigma != 0.0) {
    throw ConfigError("decompose_oracle: the oracle is exact math and requires a noiseless acquisition");
  }
  return decompose_oracle(truth, ksp.schedule, ksp.sensitivities, t0);
}

CoilImages ghost_reference(KSpaceSeries const &ksp_low, int R_high, int t0)
{
  if (ksp_low.frames.empty()) { throw ConfigError("ghost_reference: missing low-rate data"); }
  if (R_high <= ksp_low.schedule.R) { throw ConfigError("ghost_reference: R_high must exceed the acquired rate"); }
  KSpaceSeries const high = retro_undersample(ksp_low, R_high);
  CoilImages comp = form_composite(high, t0);
  CoilImages const ref = tgrappa_coil_images(ksp_low, t0);
  for (size_t c = 0; c < comp.size(); ++c) { comp[c] -= ref[c]; }
  return comp;
}

} // namespace ovrcine
