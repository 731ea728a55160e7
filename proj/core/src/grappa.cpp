#include "ovrcine/classical.hpp"

#include "ovrcine/composite.hpp"
#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"

#include <array>
#include <string>

namespace ovrcine {

namespace {

int wrap(int i, int n) { return ((i % n) + n) % n; }

// Source row offsets relative to the target row ky for missing offset d.
std::array<int, GrappaKernel::kKySpan> source_rows(int d, int R)
{
  return {-d - R, -d, -d + R, -d + 2 * R};
}

// Fills `row` (length coils * 20) with the neighborhood of (ky, kx); out-of-range
// samples read as zero unless periodic.
void gather(std::vector<ComplexImage> const &k, int ky, int kx, int d, int R, bool periodic, cplx *row)
{
  int const n_pe = static_cast<int>(k[0].rows());
  int const n_fe = static_cast<int>(k[0].cols());
  auto const rows = source_rows(d, R);
  int idx = 0;
  for (auto const &kc : k) {
    for (int dy : rows) {
      int y = ky + dy;
      bool valid_y = periodic || (y >= 0 && y < n_pe);
      y = wrap(y, n_pe);
      for (int dx = -2; dx <= 2; ++dx) {
        int x = kx + dx;
        bool const valid = valid_y && (periodic || (x >= 0 && x < n_fe));
        x = wrap(x, n_fe);
        row[idx++] = valid ? kc(y, x) : cplx(0.0, 0.0);
      }
    }
  }
}

} // namespace

std::size_t GrappaKernel::weight_count() const
{
  std::size_t n = 0;
  for (auto const &w : weights) { n += static_cast<std::size_t>(w.size()); }
  return n;
}

GrappaKernel grappa_calibrate(std::vector<ComplexImage> const &acs, int R, bool periodic)
{
  if (acs.empty()) { throw ConfigError("grappa_calibrate: no calibration data"); }
  if (R < 1) { throw ConfigError("grappa_calibrate: R must be >= 1"); }
  GrappaKernel kernel;
  kernel.R = R;
  kernel.coils = static_cast<int>(acs.size());
  kernel.periodic = periodic;
  if (R == 1) { return kernel; }

  int const n_acs = static_cast<int>(acs[0].rows());
  int const n_fe = static_cast<int>(acs[0].cols());
  int const C = kernel.coils;
  int const cols = C * GrappaKernel::kKySpan * GrappaKernel::kKxSpan;
  for (int d = 1; d < R; ++d) {
    // Target rows whose sources fit inside the block.
    std::vector<int> ky_list;
    for (int ky = 0; ky < n_acs; ++ky) {
      if (periodic) {
        ky_list.push_back(ky);
      } else {
        auto const sr = source_rows(d, R);
        if (ky + sr.front() >= 0 && ky + sr.back() < n_acs) { ky_list.push_back(ky); }
      }
    }
    int const kx_lo = periodic ? 0 : 2;
    int const kx_hi = periodic ? n_fe - 1 : n_fe - 3;
    Eigen::Index const rows = static_cast<Eigen::Index>(ky_list.size()) * std::max(0, kx_hi - kx_lo + 1);
    if (rows < cols) {
      int const need_lines = 3 * R + 1 + (cols + (kx_hi - kx_lo)) / std::max(1, kx_hi - kx_lo + 1);
      throw ConfigError("grappa_calibrate: underdetermined fit (" + std::to_string(rows) + " equations for " +
                        std::to_string(cols) + " unknowns); provide at least " + std::to_string(need_lines) +
                        " calibration lines");
    }
    Eigen::MatrixXcd A(rows, cols);
    Eigen::MatrixXcd B(rows, C);
    Eigen::Index r = 0;
    std::vector<cplx> buf(static_cast<size_t>(cols));
    for (int ky : ky_list) {
      for (int kx = kx_lo; kx <= kx_hi; ++kx, ++r) {
        gather(acs, ky, kx, d, R, periodic, buf.data());
        for (int j = 0; j < cols; ++j) { A(r, j) = buf[static_cast<size_t>(j)]; }
        for (int c = 0; c < C; ++c) { B(r, c) = acs[static_cast<size_t>(c)](ky, kx); }
      }
    }
    Eigen::MatrixXcd AhA = A.adjoint() * A;
    double const lambda = 1e-6 * AhA.trace().real() / static_cast<double>(rows);
    AhA.diagonal().array() += lambda;
    Eigen::MatrixXcd W = AhA.ldlt().solve(A.adjoint() * B);
    if (!W.allFinite()) { throw NumericalError("grappa_calibrate: non-finite kernel weights"); }
    kernel.weights.push_back(std::move(W));
  }
  return kernel;
}

std::vector<ComplexImage> grappa_fill(SampledKSpace const &y, int offset, GrappaKernel const &kernel)
{
  if (y.coil_count() != kernel.coils) { throw ConfigError("grappa_fill: coil count differs from kernel"); }
  int const R = kernel.R;
  std::vector<ComplexImage> k = y.dense();
  if (R == 1) { return k; }
  std::vector<char> acquired(static_cast<size_t>(y.n_pe), 0);
  for (int l : y.lines) { acquired[static_cast<size_t>(l)] = 1; }
  for (int l = offset; l < y.n_pe; l += R) {
    if (!acquired[static_cast<size_t>(l)]) { throw ConfigError("grappa_fill: lattice line " + std::to_string(l) + " not acquired"); }
  }
  int const cols = kernel.coils * GrappaKernel::kKySpan * GrappaKernel::kKxSpan;
  Eigen::MatrixXcd S(y.n_fe, cols);
  std::vector<cplx> buf(static_cast<size_t>(cols));
  std::vector<ComplexImage> out = k;
  for (int ky = 0; ky < y.n_pe; ++ky) {
    if (acquired[static_cast<size_t>(ky)]) { continue; }
    int const d = ((ky - offset) % R + R) % R;
    for (int kx = 0; kx < y.n_fe; ++kx) {
      gather(k, ky, kx, d, R, kernel.periodic, buf.data());
      for (int j = 0; j < cols; ++j) { S(kx, j) = buf[static_cast<size_t>(j)]; }
    }
    Eigen::MatrixXcd const T = S * kernel.weights[static_cast<size_t>(d - 1)];
    for (int c = 0; c < kernel.coils; ++c) {
      for (int kx = 0; kx < y.n_fe; ++kx) { out[static_cast<size_t>(c)](ky, kx) = T(kx, c); }
    }
  }
  return out;
}

std::vector<ComplexImage> tgrappa_coil_images(KSpaceSeries const &ksp, int t0)
{
  if (ksp.size() < ksp.schedule.R) { throw ConfigError("tgrappa: need T >= R"); }
  auto const calib = composite_kspace(ksp, t0);
  GrappaKernel const kernel = grappa_calibrate(calib, ksp.schedule.R, true);
  auto filled = grappa_fill(ksp[t0], ksp.schedule.offset(t0), kernel);
  for (auto &kc : filled) { kc = ifft2c(kc); }
  return filled;
}

ComplexImage tgrappa_recon(KSpaceSeries const &ksp, int t0)
{
  return coil_combine(tgrappa_coil_images(ksp, t0), ksp.sensitivities);
}

} // namespace ovrcine
