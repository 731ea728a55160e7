#include "ovrcine/metrics.hpp"

#include "ovrcine/error.hpp"

#include <cmath>
#include <cstdio>

namespace ovrcine {

namespace {

void require_same_dims(Eigen::Index r1, Eigen::Index c1, Eigen::Index r2, Eigen::Index c2, char const *what)
{
  if (r1 != r2 || c1 != c2) { throw ConfigError(std::string(what) + ": image dimensions differ"); }
}

RowInterval resolve(std::optional<RowInterval> rows, Eigen::Index n_rows)
{
  RowInterval r = rows.value_or(RowInterval{0, static_cast<int>(n_rows) - 1});
  if (r.lo < 0 || r.hi >= n_rows || r.size() < 1) { throw ConfigError("metric region outside the image"); }
  return r;
}

} // namespace

double psnr(ComplexImage const &ref, ComplexImage const &est, std::optional<RowInterval> rows)
{
  require_same_dims(ref.rows(), ref.cols(), est.rows(), est.cols(), "psnr");
  RowInterval const r = resolve(rows, ref.rows());
  auto const a = ref.middleRows(r.lo, r.size()).abs();
  auto const b = est.middleRows(r.lo, r.size()).abs();
  double const peak = a.maxCoeff();
  if (peak == 0.0) { throw ConfigError("psnr: reference is zero over the region"); }
  double const mse = (a - b).square().mean();
  if (mse == 0.0) { return kPsnrCap; }
  return std::min(kPsnrCap, 20.0 * std::log10(peak / std::sqrt(mse)));
}

double ssim(RealImage const &ref, RealImage const &est)
{
  require_same_dims(ref.rows(), ref.cols(), est.rows(), est.cols(), "ssim");
  int constexpr win = 11;
  double constexpr sigma = 1.5;
  if (ref.rows() < win || ref.cols() < win) { throw ConfigError("ssim: image smaller than the 11x11 window"); }
  double const peak = ref.maxCoeff();
  if (peak <= 0.0) { throw ConfigError("ssim: reference has no positive peak"); }
  RealImage const x = ref / peak;
  RealImage const y = est / peak;

  double g[win];
  double gs = 0.0;
  for (int i = 0; i < win; ++i) {
    double const d = i - win / 2;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    gs += g[i];
  }
  for (double &v : g) { v /= gs; }

  double constexpr C1 = 0.01 * 0.01;
  double constexpr C2 = 0.03 * 0.03;
  double total = 0.0;
  long count = 0;
  for (Eigen::Index r0 = 0; r0 + win <= x.rows(); ++r0) {
    for (Eigen::Index c0 = 0; c0 + win <= x.cols(); ++c0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          double const w = g[i] * g[j];
          double const a = x(r0 + i, c0 + j), b = y(r0 + i, c0 + j);
          mx += w * a;
          my += w * b;
          sxx += w * a * a;
          syy += w * b * b;
          sxy += w * a * b;
        }
      }
      double const vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double nrmse(ComplexImage const &ref, ComplexImage const &est, std::optional<RowInterval> rows)
{
  require_same_dims(ref.rows(), ref.cols(), est.rows(), est.cols(), "nrmse");
  RowInterval const r = resolve(rows, ref.rows());
  double const den = ref.middleRows(r.lo, r.size()).abs2().sum();
  if (den == 0.0) { throw ConfigError("nrmse: reference is zero over the region"); }
  return std::sqrt((ref - est).middleRows(r.lo, r.size()).abs2().sum() / den);
}

double temporal_error(FrameSeries const &ref, FrameSeries const &est, RowInterval rows)
{
  if (ref.size() != est.size() || ref.size() == 0) { throw ConfigError("temporal_error: series lengths differ"); }
  auto mean_of = [](FrameSeries const &s) {
    ComplexImage m = ComplexImage::Zero(s[0].rows(), s[0].cols());
    for (auto const &f : s.frames) { m += f; }
    return ComplexImage(m / static_cast<double>(s.size()));
  };
  ComplexImage const mr = mean_of(ref), me = mean_of(est);
  RowInterval const r = resolve(rows, mr.rows());
  double num = 0.0, den = 0.0;
  for (int t = 0; t < ref.size(); ++t) {
    require_same_dims(ref[t].rows(), ref[t].cols(), est[t].rows(), est[t].cols(), "temporal_error");
    ComplexImage const dr = ref[t] - mr, de = est[t] - me;
    num += (de - dr).middleRows(r.lo, r.size()).abs2().sum();
    den += dr.middleRows(r.lo, r.size()).abs2().sum();
  }
  if (den == 0.0) { throw ConfigError("temporal_error: reference has no temporal variation"); }
  return std::sqrt(num / den);
}

std::string metrics_csv(std::vector<MetricsRow> const &rows)
{
  std::string out = "frame,method,psnr,ssim,roi_psnr\n";
  char buf[256];
  for (auto const &r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%.6f\n", r.frame, r.method.c_str(), r.psnr, r.ssim, r.roi_psnr);
    out += buf;
  }
  return out;
}

} // namespace ovrcine
