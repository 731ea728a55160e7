#include "ovrcine/classical.hpp"

#include "ovrcine/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ovrcine {

ComplexImage zero_filled(KSpaceSeries const &ksp, int t)
{
  if (t < 0 || t >= ksp.size()) { throw ConfigError("zero_filled: frame index out of range"); }
  return apply_EH(ksp[t], ksp.sensitivities);
}

void validate(CgConfig const &cfg)
{
  if (cfg.max_iters < 1) { throw ConfigError("CgConfig: max_iters must be >= 1"); }
  if (!(cfg.rel_tol > 0.0)) { throw ConfigError("CgConfig: rel_tol must be > 0"); }
  if (!(cfg.mu >= 0.0)) { throw ConfigError("CgConfig: mu must be >= 0"); }
}

CgResult cg_sense(SampledKSpace const &y, CoilSensitivities const &sens, CgConfig const &cfg,
                  std::function<void(int, ComplexImage const &)> const &on_iterate)
{
  validate(cfg);
  ComplexImage const b = apply_EH(y, sens);
  CgResult res;
  res.image = ComplexImage::Zero(b.rows(), b.cols());
  double const bnorm = norm2(b);
  res.residuals.push_back(bnorm > 0.0 ? 1.0 : 0.0);
  if (bnorm == 0.0) { return res; }

  ComplexImage r = b;
  ComplexImage p = r;
  double rr = r.abs2().sum();
  double best = 1.0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    ComplexImage const q = apply_normal(p, sens, y.lines, cfg.mu);
    double const pq = std::real(inner(p, q));
    if (!(pq > 0.0)) {
      res.diverged = true;
      res.diagnostic = "cg_sense: system lost positive definiteness at iteration " + std::to_string(it);
      break;
    }
    double const alpha = rr / pq;
    res.image += alpha * p;
    r -= alpha * q;
    double const rr_new = r.abs2().sum();
    double const rel = std::sqrt(rr_new) / bnorm;
    res.residuals.push_back(rel);
    res.iterations = it;
    if (on_iterate) { on_iterate(it, res.image); }
    if (!std::isfinite(rel)) {
      res.diverged = true;
      res.diagnostic = "cg_sense: non-finite residual at iteration " + std::to_string(it);
      break;
    }
    best = std::min(best, rel);
    // CG residuals are not monotone; a large excursion is reported, not acted on.
    if (rel > 10.0 * best && !res.diverged) {
      res.diverged = true;
      res.diagnostic = "cg_sense: residual grew by more than 10x at iteration " + std::to_string(it);
    }
    if (rel < cfg.rel_tol) { break; }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return res;
}

} // namespace ovrcine
