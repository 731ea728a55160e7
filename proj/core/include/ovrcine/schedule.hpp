#pragma once

#include <vector>

namespace ovrcine {

// Time-interleaved shifted uniform PE sampling. Frame t owns the lattice
// {k : k = offsets[t] (mod R)}; `lines[t]` is the sorted acquired set. It equals
// the lattice for plain schedules and may additionally hold the line nearest
// the k-space center (`center_line`, index n_pe/2 under the centered FFT).
struct SamplingSchedule
{
  int n_pe = 0;
  int R = 1;
  int center_line = 0;
  std::vector<int> offsets;
  std::vector<std::vector<int>> lines;

  int frames() const { return static_cast<int>(lines.size()); }
  std::vector<int> const &frame_lines(int t) const { return lines[static_cast<size_t>(t)]; }
  int offset(int t) const { return offsets[static_cast<size_t>(t)]; }
  bool on_lattice(int t, int k) const { return ((k - offset(t)) % R + R) % R == 0; }
  std::vector<int> lattice_lines(int t) const;
  // Acquired line of frame t closest to center_line (lower index on ties).
  int nearest_center(int t) const;
};

// Frame t samples {k : k = (t + offset0) mod R}; with `with_center` every frame
// also acquires center_line. R must divide n_pe.
SamplingSchedule make_schedule(int n_pe, int R, int T, int offset0 = 0, bool with_center = false);

// Keeps, per frame, the R_new lattice with offset (t + offset0) mod R_new (which
// refines the frame's R lattice, so the interleaved structure survives) plus the
// acquired line nearest the k-space center. R_new must be a multiple of s.R.
SamplingSchedule retro_undersample(SamplingSchedule const &s, int R_new);

} // namespace ovrcine
