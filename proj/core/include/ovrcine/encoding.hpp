#pragma once

#include "ovrcine/image.hpp"
#include "ovrcine/schedule.hpp"

#include <vector>

namespace ovrcine {

// Multi-coil k-space of one frame, holding acquired rows only. coils[c] is
// lines.size() x n_fe; row j of every coil holds PE line lines[j].
struct SampledKSpace
{
  int n_pe = 0;
  int n_fe = 0;
  std::vector<int> lines;
  std::vector<ComplexImage> coils;

  int coil_count() const { return static_cast<int>(coils.size()); }
  // Position of PE line k in `lines`, or -1.
  int row_of(int k) const;
  // Keep only the listed lines (each must be present).
  SampledKSpace subset(std::vector<int> const &keep) const;
  // Dense n_pe x n_fe k-space per coil, zeros on unsampled rows.
  std::vector<ComplexImage> dense() const;

  SampledKSpace &operator-=(SampledKSpace const &other);
  SampledKSpace &operator*=(double s);
};

struct KSpaceSeries
{
  std::vector<SampledKSpace> frames;
  SamplingSchedule schedule;
  CoilSensitivities sensitivities;
  double noise_sigma = 0.0;

  int size() const { return static_cast<int>(frames.size()); }
  Dims dims() const { return sensitivities.dims(); }
  SampledKSpace const &operator[](int t) const { return frames[static_cast<size_t>(t)]; }
};

// Per coil c: rows `lines` of fft2c(s_c * x).
SampledKSpace apply_E(ComplexImage const &x, CoilSensitivities const &sens, std::vector<int> const &lines);

// Zero-fill each coil's unsampled rows, ifft2c, weight by conj(s_c) and sum.
ComplexImage apply_EH(SampledKSpace const &y, CoilSensitivities const &sens);

// (E^H E + mu I) x for the line set `lines`.
ComplexImage apply_normal(ComplexImage const &x, CoilSensitivities const &sens, std::vector<int> const &lines,
                          double mu = 0.0);

// Restricts a series to a coarser schedule derived by retro_undersample.
KSpaceSeries retro_undersample(KSpaceSeries const &ksp, int R_new);

// Sum over coils and lines of conj(a) b.
cplx inner(SampledKSpace const &a, SampledKSpace const &b);
double norm2(SampledKSpace const &a);

} // namespace ovrcine
