#include "ovrcine/encoding.hpp"

#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ovrcine {

namespace {

void check_lines(std::vector<int> const &lines, int n_pe, char const *what)
{
  for (int k : lines) {
    if (k < 0 || k >= n_pe) {
      throw ConfigError(std::string(what) + ": PE line " + std::to_string(k) + " outside [0, " +
                        std::to_string(n_pe) + ")");
    }
  }
}

void check_sens(CoilSensitivities const &sens, Dims d, char const *what)
{
  if (sens.coils() == 0) { throw ConfigError(std::string(what) + ": no coil maps"); }
  if (sens.dims() != d) { throw ConfigError(std::string(what) + ": sensitivity dims do not match image dims"); }
}

} // namespace

int SampledKSpace::row_of(int k) const
{
  auto it = std::lower_bound(lines.begin(), lines.end(), k);
  if (it == lines.end() || *it != k) { return -1; }
  return static_cast<int>(it - lines.begin());
}

SampledKSpace SampledKSpace::subset(std::vector<int> const &keep) const
{
  SampledKSpace out;
  out.n_pe = n_pe;
  out.n_fe = n_fe;
  out.lines = keep;
  std::sort(out.lines.begin(), out.lines.end());
  for (auto const &c : coils) {
    ComplexImage rows(static_cast<Eigen::Index>(out.lines.size()), n_fe);
    for (size_t j = 0; j < out.lines.size(); ++j) {
      int const r = row_of(out.lines[j]);
      if (r < 0) { throw ConfigError("SampledKSpace::subset: line " + std::to_string(out.lines[j]) + " not acquired"); }
      rows.row(static_cast<Eigen::Index>(j)) = c.row(r);
    }
    out.coils.push_back(std::move(rows));
  }
  return out;
}

std::vector<ComplexImage> SampledKSpace::dense() const
{
  std::vector<ComplexImage> out;
  out.reserve(coils.size());
  for (auto const &c : coils) {
    ComplexImage k = ComplexImage::Zero(n_pe, n_fe);
    for (size_t j = 0; j < lines.size(); ++j) { k.row(lines[j]) = c.row(static_cast<Eigen::Index>(j)); }
    out.push_back(std::move(k));
  }
  return out;
}

SampledKSpace &SampledKSpace::operator-=(SampledKSpace const &other)
{
  if (other.lines != lines || other.coils.size() != coils.size()) {
    throw ConfigError("SampledKSpace: line sets differ");
  }
  for (size_t c = 0; c < coils.size(); ++c) { coils[c] -= other.coils[c]; }
  return *this;
}

SampledKSpace &SampledKSpace::operator*=(double s)
{
  for (auto &c : coils) { c *= s; }
  return *this;
}

SampledKSpace apply_E(ComplexImage const &x, CoilSensitivities const &sens, std::vector<int> const &lines)
{
  Dims const d = dims_of(x);
  check_sens(sens, d, "apply_E");
  check_lines(lines, d.n_pe, "apply_E");
  require_finite(x, "apply_E");
  SampledKSpace y;
  y.n_pe = d.n_pe;
  y.n_fe = d.n_fe;
  y.lines = lines;
  std::sort(y.lines.begin(), y.lines.end());
  ComplexImage k;
  for (auto const &s : sens.maps) {
    fft2c_into(s * x, k);
    ComplexImage rows(static_cast<Eigen::Index>(y.lines.size()), d.n_fe);
    for (size_t j = 0; j < y.lines.size(); ++j) { rows.row(static_cast<Eigen::Index>(j)) = k.row(y.lines[j]); }
    y.coils.push_back(std::move(rows));
  }
  return y;
}

ComplexImage apply_EH(SampledKSpace const &y, CoilSensitivities const &sens)
{
  Dims const d{y.n_pe, y.n_fe};
  check_sens(sens, d, "apply_EH");
  check_lines(y.lines, d.n_pe, "apply_EH");
  if (y.coil_count() != sens.coils()) { throw ConfigError("apply_EH: coil count mismatch"); }
  ComplexImage out = ComplexImage::Zero(d.n_pe, d.n_fe);
  ComplexImage k = ComplexImage::Zero(d.n_pe, d.n_fe);
  ComplexImage img;
  for (int c = 0; c < sens.coils(); ++c) {
    k.setZero();
    auto const &rows = y.coils[static_cast<size_t>(c)];
    for (size_t j = 0; j < y.lines.size(); ++j) { k.row(y.lines[j]) = rows.row(static_cast<Eigen::Index>(j)); }
    ifft2c_into(k, img);
    out += sens[c].conjugate() * img;
  }
  return out;
}

ComplexImage apply_normal(ComplexImage const &x, CoilSensitivities const &sens, std::vector<int> const &lines,
                          double mu)
{
  Dims const d = dims_of(x);
  check_sens(sens, d, "apply_normal");
  std::vector<char> keep(static_cast<size_t>(d.n_pe), 0);
  for (int k : lines) {
    if (k < 0 || k >= d.n_pe) { throw ConfigError("apply_normal: PE line out of range"); }
    keep[static_cast<size_t>(k)] = 1;
  }
  ComplexImage out = mu * x;
  ComplexImage k;
  ComplexImage img;
  for (auto const &s : sens.maps) {
    fft2c_into(s * x, k);
    for (int r = 0; r < d.n_pe; ++r) {
      if (!keep[static_cast<size_t>(r)]) { k.row(r).setZero(); }
    }
    ifft2c_into(k, img);
    out += s.conjugate() * img;
  }
  return out;
}

KSpaceSeries retro_undersample(KSpaceSeries const &ksp, int R_new)
{
  KSpaceSeries out;
  out.schedule = retro_undersample(ksp.schedule, R_new);
  out.sensitivities = ksp.sensitivities;
  out.noise_sigma = ksp.noise_sigma;
  out.frames.reserve(ksp.frames.size());
  for (int t = 0; t < ksp.size(); ++t) { out.frames.push_back(ksp[t].subset(out.schedule.frame_lines(t))); }
  return out;
}

cplx inner(SampledKSpace const &a, SampledKSpace const &b)
{
  if (a.lines != b.lines || a.coils.size() != b.coils.size()) { throw ConfigError("inner: k-space layouts differ"); }
  cplx s = 0.0;
  for (size_t c = 0; c < a.coils.size(); ++c) { s += (a.coils[c].conjugate() * b.coils[c]).sum(); }
  return s;
}

double norm2(SampledKSpace const &a) { return std::sqrt(std::real(inner(a, a))); }

} // namespace ovrcine
