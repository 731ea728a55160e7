#pragma once

#include <Eigen/Dense>

#include <complex>
#include <string_view>
#include <vector>

namespace ovrcine {

using cplx = std::complex<double>;

// Rows index phase encoding (PE), columns index frequency encoding (FE).
using ComplexImage = Eigen::Array<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealImage = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One image per receiver coil.
using CoilImages = std::vector<ComplexImage>;

struct Dims
{
  int n_pe = 0;
  int n_fe = 0;
  bool operator==(Dims const &) const = default;
};

inline Dims dims_of(ComplexImage const &x) { return {static_cast<int>(x.rows()), static_cast<int>(x.cols())}; }

struct FrameSeries
{
  std::vector<ComplexImage> frames;
  double frame_period = 0.05; // seconds

  int size() const { return static_cast<int>(frames.size()); }
  Dims dims() const { return frames.empty() ? Dims{} : dims_of(frames.front()); }
  ComplexImage const &operator[](int t) const { return frames[static_cast<size_t>(t)]; }
};

// Coil sensitivity maps. Full maps satisfy sum_c |s_c|^2 = 1 on every pixel; by
// convention `masked` maps (zeroed on the outer volume) waive that invariant.
struct CoilSensitivities
{
  std::vector<ComplexImage> maps;
  bool masked = false;

  int coils() const { return static_cast<int>(maps.size()); }
  Dims dims() const { return maps.empty() ? Dims{} : dims_of(maps.front()); }
  ComplexImage const &operator[](int c) const { return maps[static_cast<size_t>(c)]; }
};

// Inclusive PE row interval.
struct RowInterval
{
  int lo = 0;
  int hi = -1;
  int size() const { return hi - lo + 1; }
  bool contains(int r) const { return r >= lo && r <= hi; }
  bool operator==(RowInterval const &) const = default;
};

bool all_finite(ComplexImage const &x);
// Throws NumericalError naming `what` when x holds NaN/Inf.
void require_finite(ComplexImage const &x, std::string_view what);
// Throws ConfigError when x is smaller than 8x8.
void require_min_dims(Dims d, std::string_view what);

double norm2(ComplexImage const &x);
double norm2(CoilImages const &x);
// <a, b> = sum conj(a) * b.
cplx inner(ComplexImage const &a, ComplexImage const &b);

// Sensitivity-weighted combination sum_c conj(s_c) x_c.
ComplexImage coil_combine(CoilImages const &coil_images, CoilSensitivities const &sens);
// s_c * x for every coil.
CoilImages coil_expand(ComplexImage const &x, CoilSensitivities const &sens);

// Zero everything outside `rows` (all columns kept).
ComplexImage restrict_rows(ComplexImage const &x, RowInterval rows);

} // namespace ovrcine
