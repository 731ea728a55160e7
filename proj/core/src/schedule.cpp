#include "ovrcine/schedule.hpp"

#include "ovrcine/error.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace ovrcine {

std::vector<int> SamplingSchedule::lattice_lines(int t) const
{
  std::vector<int> out;
  for (int k = offset(t); k < n_pe; k += R) { out.push_back(k); }
  return out;
}

int SamplingSchedule::nearest_center(int t) const
{
  auto const &ls = frame_lines(t);
  int best = ls.front();
  for (int k : ls) {
    if (std::abs(k - center_line) < std::abs(best - center_line)) { best = k; }
  }
  return best;
}

SamplingSchedule make_schedule(int n_pe, int R, int T, int offset0, bool with_center)
{
  if (n_pe < 8) { throw ConfigError("make_schedule: n_pe must be >= 8"); }
  if (R < 1 || n_pe % R != 0) {
    throw ConfigError("make_schedule: R=" + std::to_string(R) + " does not divide n_pe=" + std::to_string(n_pe));
  }
  if (T < 1) { throw ConfigError("make_schedule: T must be >= 1"); }
  if (offset0 < 0 || offset0 >= R) { throw ConfigError("make_schedule: offset0 must lie in [0, R)"); }

  SamplingSchedule s;
  s.n_pe = n_pe;
  s.R = R;
  s.center_line = n_pe / 2;
  s.offsets.resize(static_cast<size_t>(T));
  s.lines.resize(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    s.offsets[static_cast<size_t>(t)] = (t + offset0) % R;
    auto ls = s.lattice_lines(t);
    if (with_center && !s.on_lattice(t, s.center_line)) {
      ls.insert(std::upper_bound(ls.begin(), ls.end(), s.center_line), s.center_line);
    }
    s.lines[static_cast<size_t>(t)] = std::move(ls);
  }
  return s;
}

SamplingSchedule retro_undersample(SamplingSchedule const &s, int R_new)
{
  if (R_new < s.R || R_new % s.R != 0) {
    throw ConfigError("retro_undersample: R_new=" + std::to_string(R_new) + " is not a multiple of R=" +
                      std::to_string(s.R));
  }
  SamplingSchedule out;
  out.n_pe = s.n_pe;
  out.R = R_new;
  out.center_line = s.center_line;
  out.offsets.resize(s.offsets.size());
  out.lines.resize(s.lines.size());

  int const offset0 = s.frames() > 0 ? s.offset(0) : 0;
  for (int t = 0; t < s.frames(); ++t) {
    int const o = (t + offset0) % R_new;
    if (o % s.R != s.offset(t)) { throw ConfigError("retro_undersample: input schedule is not time-interleaved"); }
    out.offsets[static_cast<size_t>(t)] = o;
    int const keep_center = s.nearest_center(t);
    std::vector<int> kept;
    for (int k : s.frame_lines(t)) {
      if (k % R_new == o || k == keep_center) { kept.push_back(k); }
    }
    out.lines[static_cast<size_t>(t)] = std::move(kept);
  }
  return out;
}

} // namespace ovrcine
