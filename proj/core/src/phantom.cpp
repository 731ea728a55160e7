#include "ovrcine/phantom.hpp"

#include "ovrcine/error.hpp"
#include "ovrcine/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ovrcine {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEdgeHalfWidth = 0.75; // pixels over which edges ramp from 1 to 0

// 1 for d <= -w, 0 for d >= w, C1-smooth in between; exactly zero past the edge.
double ramp(double d, double w = kEdgeHalfWidth)
{
  if (d <= -w) { return 1.0; }
  if (d >= w) { return 0.0; }
  double const u = (d + w) / (2.0 * w);
  return 1.0 - u * u * (3.0 - 2.0 * u);
}

struct Texture
{
  double fy[3], fx[3], ph[3];
};

struct SceneParams
{
  Texture tex;
  double phase0, phase_row, phase_col, phase_quad;
  double dot_angle[2];
};

SceneParams draw_params(std::uint64_t seed)
{
  Rng rng(seed);
  SceneParams p{};
  for (int j = 0; j < 3; ++j) {
    p.tex.fy[j] = 1.0 + std::floor(rng.uniform() * 3.0);
    p.tex.fx[j] = 1.0 + std::floor(rng.uniform() * 3.0);
    p.tex.ph[j] = 2.0 * kPi * rng.uniform();
  }
  p.phase0 = -kPi + 2.0 * kPi * rng.uniform();
  p.phase_row = -1.5 + 3.0 * rng.uniform();
  p.phase_col = -1.5 + 3.0 * rng.uniform();
  p.phase_quad = -1.0 + 2.0 * rng.uniform();
  p.dot_angle[0] = 0.75 * kPi + 0.3 * (rng.uniform() - 0.5);
  p.dot_angle[1] = 1.25 * kPi + 0.3 * (rng.uniform() - 0.5);
  return p;
}

constexpr double kBodyLevel = 0.5;
constexpr double kHeartLevel = 1.0;
constexpr double kDotLevel = 0.25;
constexpr double kDotRadius = 1.6;

double background_value(PhantomConfig const &cfg, BodyGeometry const &g, SceneParams const &p, double row,
                        double col)
{
  double const rho = g.rho(row, col);
  double const scale = std::min(g.semi_rows, g.semi_cols);
  double const inside = ramp((rho - 1.0) * scale);
  if (inside == 0.0) { return 0.0; }
  double const rim = 1.0 - ramp((rho - (1.0 - g.rim_width)) * scale);
  double tex = 1.0;
  for (int j = 0; j < 3; ++j) {
    tex += 0.15 * std::cos(2.0 * kPi * (p.tex.fy[j] * row / cfg.n_pe + p.tex.fx[j] * col / cfg.n_fe) + p.tex.ph[j]);
  }
  return inside * kBodyLevel * ((1.0 - rim) * tex + rim * cfg.rim_intensity);
}

} // namespace

double BodyGeometry::rho(double row, double col) const
{
  double const dr = (row - center_row) / semi_rows;
  double const dc = (col - center_col) / semi_cols;
  return std::sqrt(dr * dr + dc * dc);
}

BodyGeometry body_geometry(PhantomConfig const &cfg)
{
  BodyGeometry g{};
  g.center_row = cfg.n_pe / 2.0;
  g.center_col = cfg.n_fe / 2.0;
  g.semi_rows = 0.44 * cfg.n_pe;
  g.semi_cols = 0.42 * cfg.n_fe;
  g.rim_width = 3.0 / std::min(g.semi_rows, g.semi_cols);
  return g;
}

double heart_radius(PhantomConfig const &cfg, double t)
{
  return cfg.r0 * (1.0 + cfg.contraction * std::sin(2.0 * kPi * t / cfg.period));
}

void validate(PhantomConfig const &cfg)
{
  require_min_dims({cfg.n_pe, cfg.n_fe}, "PhantomConfig");
  if (cfg.T < 1) { throw ConfigError("PhantomConfig: T must be >= 1"); }
  if (cfg.contraction < 0.0 || cfg.contraction > 0.5) { throw ConfigError("PhantomConfig: contraction must lie in [0, 0.5]"); }
  if (cfg.period < 4.0) { throw ConfigError("PhantomConfig: cardiac period must be >= 4 frames"); }
  if (cfg.rim_intensity < 1.0) { throw ConfigError("PhantomConfig: rim_intensity must be >= 1"); }
  if (cfg.r0 <= 0.0) { throw ConfigError("PhantomConfig: r0 must be positive"); }
  double const extent = cfg.r0 * (1.0 + cfg.contraction) + kEdgeHalfWidth + kRoiMargin;
  if (cfg.r0 * (1.0 + cfg.contraction) + kRoiMargin >= std::min(cfg.n_pe, cfg.n_fe) / 2.0 ||
      cfg.heart_row - extent < 0.0 || cfg.heart_row + extent > cfg.n_pe - 1 || cfg.heart_col - extent < 0.0 ||
      cfg.heart_col + extent > cfg.n_fe - 1) {
    throw ConfigError("PhantomConfig: heart does not fit in the field of view");
  }
}

PhantomTruth make_phantom(PhantomConfig const &cfg)
{
  validate(cfg);
  SceneParams const p = draw_params(cfg.seed);
  BodyGeometry const g = body_geometry(cfg);

  ComplexImage phase(cfg.n_pe, cfg.n_fe);
  for (int r = 0; r < cfg.n_pe; ++r) {
    for (int c = 0; c < cfg.n_fe; ++c) {
      double const u = (r - g.center_row) / cfg.n_pe;
      double const v = (c - g.center_col) / cfg.n_fe;
      phase(r, c) = std::polar(1.0, p.phase0 + p.phase_row * u + p.phase_col * v + p.phase_quad * u * u);
    }
  }

  auto background_at = [&](double shift) {
    ComplexImage bg(cfg.n_pe, cfg.n_fe);
    for (int r = 0; r < cfg.n_pe; ++r) {
      for (int c = 0; c < cfg.n_fe; ++c) { bg(r, c) = background_value(cfg, g, p, r - shift, c) * phase(r, c); }
    }
    return bg;
  };

  PhantomTruth truth;
  truth.frames.frame_period = cfg.frame_period;
  truth.moving.frame_period = cfg.frame_period;
  truth.background.frame_period = cfg.frame_period;
  truth.stationary = background_at(0.0);

  for (int t = 0; t < cfg.T; ++t) {
    double const radius = heart_radius(cfg, t);
    ComplexImage bg = truth.stationary;
    if (cfg.drift_amplitude != 0.0) {
      bg = background_at(cfg.drift_amplitude * std::sin(2.0 * kPi * t / (10.0 * cfg.period)));
    }
    ComplexImage moving = ComplexImage::Zero(cfg.n_pe, cfg.n_fe);
    for (int r = 0; r < cfg.n_pe; ++r) {
      for (int c = 0; c < cfg.n_fe; ++c) {
        double const dr = r - cfg.heart_row;
        double const dc = c - cfg.heart_col;
        double const disk = ramp(std::sqrt(dr * dr + dc * dc) - radius);
        if (disk == 0.0) { continue; }
        double dots = 0.0;
        for (double angle : p.dot_angle) {
          double const pr = cfg.heart_row + 0.45 * radius * std::sin(angle);
          double const pc = cfg.heart_col + 0.45 * radius * std::cos(angle);
          dots = std::max(dots, ramp(std::hypot(r - pr, c - pc) - kDotRadius, 0.6));
        }
        double const heart = kHeartLevel - (kHeartLevel - kDotLevel) * dots;
        // The disk replaces the body; moving = heart content minus the occluded background.
        moving(r, c) = disk * heart * phase(r, c) - disk * bg(r, c);
      }
    }
    truth.frames.frames.push_back(bg + moving);
    truth.moving.frames.push_back(std::move(moving));
    truth.background.frames.push_back(std::move(bg));
  }

  double const extent = cfg.r0 * (1.0 + cfg.contraction) + kEdgeHalfWidth;
  truth.roi_rows.lo = std::max(0, static_cast<int>(std::floor(cfg.heart_row - extent)) - kRoiMargin);
  truth.roi_rows.hi = std::min(cfg.n_pe - 1, static_cast<int>(std::ceil(cfg.heart_row + extent)) + kRoiMargin);
  return truth;
}

CoilSensitivities make_coil_maps(int C, Dims dims)
{
  if (C < 1) { throw ConfigError("make_coil_maps: need at least one coil"); }
  require_min_dims(dims, "make_coil_maps");
  double const cr = dims.n_pe / 2.0;
  double const cc = dims.n_fe / 2.0;
  double const sr = 0.35 * dims.n_pe;
  double const sc = 0.35 * dims.n_fe;
  CoilSensitivities sens;
  for (int k = 0; k < C; ++k) {
    double const theta = 2.0 * kPi * k / C;
    double const pr = cr + 0.55 * dims.n_pe * std::sin(theta);
    double const pc = cc + 0.55 * dims.n_fe * std::cos(theta);
    ComplexImage m(dims.n_pe, dims.n_fe);
    for (int r = 0; r < dims.n_pe; ++r) {
      for (int c = 0; c < dims.n_fe; ++c) {
        double const mag = std::exp(-0.5 * ((r - pr) * (r - pr) / (sr * sr) + (c - pc) * (c - pc) / (sc * sc)));
        double const ph = theta + 1.2 * std::sin(theta + 0.3) * (r - cr) / dims.n_pe +
                          1.2 * std::cos(theta + 0.3) * (c - cc) / dims.n_fe;
        m(r, c) = std::polar(mag, ph);
      }
    }
    sens.maps.push_back(std::move(m));
  }
  RealImage sos = RealImage::Zero(dims.n_pe, dims.n_fe);
  for (auto const &m : sens.maps) { sos += m.abs2(); }
  RealImage const inv = sos.sqrt().inverse();
  for (auto &m : sens.maps) { m *= inv.cast<cplx>(); }
  return sens;
}

KSpaceSeries simulate_acquisition(PhantomTruth const &truth, CoilSensitivities const &sens,
                                  SamplingSchedule const &sched, double noise_sigma, std::uint64_t seed)
{
  if (sched.frames() != truth.frames.size()) { throw ConfigError("simulate_acquisition: schedule/phantom frame count mismatch"); }
  if (sched.n_pe != truth.frames.dims().n_pe) { throw ConfigError("simulate_acquisition: schedule n_pe mismatch"); }
  if (noise_sigma < 0.0) { throw ConfigError("simulate_acquisition: noise_sigma must be >= 0"); }
  KSpaceSeries ksp;
  ksp.schedule = sched;
  ksp.sensitivities = sens;
  ksp.noise_sigma = noise_sigma;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  double const s = noise_sigma / std::sqrt(2.0);
  for (int t = 0; t < truth.frames.size(); ++t) {
    SampledKSpace y = apply_E(truth.frames[t], sens, sched.frame_lines(t));
    if (noise_sigma > 0.0) {
      for (auto &c : y.coils) {
        for (Eigen::Index i = 0; i < c.size(); ++i) {
          double const re = rng.normal();
          double const im = rng.normal();
          c.data()[i] += cplx(s * re, s * im);
        }
      }
    }
    ksp.frames.push_back(std::move(y));
  }
  return ksp;
}

double noise_sigma_for_snr(PhantomTruth const &truth, CoilSensitivities const &sens, SamplingSchedule const &sched,
                           double snr_db)
{
  double energy = 0.0;
  double count = 0.0;
  for (int t = 0; t < truth.frames.size(); ++t) {
    SampledKSpace const y = apply_E(truth.frames[t], sens, sched.frame_lines(t));
    double const n = norm2(y);
    energy += n * n;
    count += static_cast<double>(y.lines.size()) * y.n_fe * y.coil_count();
  }
  return std::sqrt(energy / count) / std::pow(10.0, snr_db / 20.0);
}

} // namespace ovrcine
