#include "ovrcine/image.hpp"

#include "ovrcine/error.hpp"

#include <cmath>
#include <string>

namespace ovrcine {

bool all_finite(ComplexImage const &x)
{
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto const v = x.data()[i];
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) { return false; }
  }
  return true;
}

void require_finite(ComplexImage const &x, std::string_view what)
{
  if (!all_finite(x)) { throw NumericalError(std::string(what) + ": input contains non-finite values"); }
}

void require_min_dims(Dims d, std::string_view what)
{
  if (d.n_pe < 8 || d.n_fe < 8) {
    throw ConfigError(std::string(what) + ": image dims must be at least 8x8, got " + std::to_string(d.n_pe) +
                      "x" + std::to_string(d.n_fe));
  }
}

double norm2(ComplexImage const &x) { return std::sqrt(x.abs2().sum()); }

double norm2(CoilImages const &x)
{
  double s = 0.0;
  for (auto const &c : x) { s += c.abs2().sum(); }
  return std::sqrt(s);
}

cplx inner(ComplexImage const &a, ComplexImage const &b) { return (a.conjugate() * b).sum(); }

ComplexImage coil_combine(CoilImages const &coil_images, CoilSensitivities const &sens)
{
  if (coil_images.size() != sens.maps.size() || coil_images.empty()) {
    throw ConfigError("coil_combine: coil count mismatch");
  }
  ComplexImage out = ComplexImage::Zero(coil_images[0].rows(), coil_images[0].cols());
  for (size_t c = 0; c < coil_images.size(); ++c) {
    if (dims_of(coil_images[c]) != dims_of(sens.maps[c])) { throw ConfigError("coil_combine: dims mismatch"); }
    out += sens.maps[c].conjugate() * coil_images[c];
  }
  return out;
}

CoilImages coil_expand(ComplexImage const &x, CoilSensitivities const &sens)
{
  CoilImages out;
  out.reserve(sens.maps.size());
  for (auto const &s : sens.maps) {
    if (dims_of(s) != dims_of(x)) { throw ConfigError("coil_expand: dims mismatch"); }
    out.emplace_back(s * x);
  }
  return out;
}

ComplexImage restrict_rows(ComplexImage const &x, RowInterval rows)
{
  ComplexImage out = ComplexImage::Zero(x.rows(), x.cols());
  for (int r = std::max(0, rows.lo); r <= std::min<int>(rows.hi, static_cast<int>(x.rows()) - 1); ++r) {
    out.row(r) = x.row(r);
  }
  return out;
}

} // namespace ovrcine
