#include "ovrcine/pddl.hpp"

#include "ovrcine/error.hpp"
#include "ovrcine/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ovrcine {

std::vector<SsduSplit> ssdu_partition(std::vector<int> const &omega, int protect, int K, double rho,
                                      std::uint64_t seed)
{
  if (omega.size() < 4) { throw ConfigError("ssdu_partition: need at least 4 acquired lines"); }
  if (K < 1) { throw ConfigError("ssdu_partition: K must be >= 1"); }
  if (!(rho > 0.0 && rho < 1.0)) { throw ConfigError("ssdu_partition: rho must lie in (0, 1)"); }
  if (std::find(omega.begin(), omega.end(), protect) == omega.end()) {
    throw ConfigError("ssdu_partition: protected line is not acquired");
  }
  std::vector<int> pool;
  for (int k : omega) {
    if (k != protect) { pool.push_back(k); }
  }
  std::sort(pool.begin(), pool.end());
  auto const n_lambda = static_cast<size_t>(std::floor(rho * static_cast<double>(omega.size() - 1)));
  if (n_lambda == 0) { throw ConfigError("ssdu_partition: rho leaves Lambda empty"); }

  std::vector<SsduSplit> out;
  for (int k = 0; k < K; ++k) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k), 0x55d0));
    std::vector<int> perm = pool;
    for (size_t i = perm.size() - 1; i > 0; --i) { std::swap(perm[i], perm[rng.below(i + 1)]); }
    SsduSplit s;
    s.lambda.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_lambda));
    std::sort(s.lambda.begin(), s.lambda.end());
    for (int l : omega) {
      if (!std::binary_search(s.lambda.begin(), s.lambda.end(), l)) { s.theta.push_back(l); }
    }
    std::sort(s.theta.begin(), s.theta.end());
    out.push_back(std::move(s));
  }
  return out;
}

SsduMaskSet ssdu_partition(SamplingSchedule const &sched, int K, double rho, std::uint64_t seed)
{
  SsduMaskSet out;
  for (int t = 0; t < sched.frames(); ++t) {
    out.push_back(ssdu_partition(sched.frame_lines(t), sched.nearest_center(t), K, rho,
                                 mix_seed(seed, static_cast<std::uint64_t>(t))));
  }
  return out;
}

void validate(UnrollConfig const &cfg)
{
  validate(cfg.prox);
  if (cfg.n_unrolls < 1 || cfg.n_cg < 1) { throw ConfigError("unrolled network needs n_unrolls >= 1 and n_cg >= 1"); }
  if (!(cfg.mu_init > 0.0)) { throw ConfigError("mu_init must be positive"); }
  if (cfg.prox.complex_channels != 1) { throw ConfigError("the proximal network acts on one complex image"); }
}

double PddlParams::mu() const { return std::exp(params.at("log_mu").item()); }

nn::ResNetParams PddlParams::prox() const
{
  nn::ResNetParams r{config.prox, {}};
  for (size_t i = 0; i + 1 < params.names.size(); ++i) { r.params.add(params.names[i], params.tensors[i]); }
  return r;
}

PddlParams init_pddl(UnrollConfig const &cfg, std::uint64_t seed)
{
  validate(cfg);
  PddlParams p{cfg, nn::init_resnet(cfg.prox, seed).params};
  p.params.add("log_mu", ad::Tensor::scalar(std::log(cfg.mu_init)));
  return p;
}

namespace {

// CG on (E^H E + mu) x = rhs from x_init, recorded step by step.
ad::Var cg_unrolled(ad::Var const &rhs, ad::Var const &mu, ad::Var const &x_init, ad::EncodingPtr const &ctx,
                    int n_cg)
{
  ad::Var x = x_init;
  ad::Var r = ad::sub(rhs, ad::gram(x, mu, ctx));
  ad::Var p = r;
  ad::Var rr = ad::dot(r, r);
  double const rr0 = rr.value().item();
  for (int i = 0; i < n_cg; ++i) {
    if (rr.value().item() <= 1e-30 * rr0 || rr0 == 0.0) { break; }
    ad::Var const Ap = ad::gram(p, mu, ctx);
    ad::Var const alpha = ad::div(rr, ad::dot(p, Ap));
    x = ad::axpy(x, alpha, p);
    r = ad::axpy(r, ad::scale(alpha, -1.0), Ap);
    ad::Var const rr_new = ad::dot(r, r);
    p = ad::axpy(r, ad::div(rr_new, rr), p);
    rr = rr_new;
  }
  return x;
}

ad::Tensor kspace_tensor(SampledKSpace const &y, double scale)
{
  int const C = y.coil_count();
  int const L = static_cast<int>(y.lines.size());
  ad::Tensor t({2 * C, L, y.n_fe});
  for (int c = 0; c < C; ++c) {
    auto const &rows = y.coils[static_cast<size_t>(c)];
    for (int i = 0; i < L * y.n_fe; ++i) {
      t.plane(2 * c)[i] = rows.data()[i].real() / scale;
      t.plane(2 * c + 1)[i] = rows.data()[i].imag() / scale;
    }
  }
  return t;
}

void require_sorted(std::vector<int> const &lines)
{
  if (!std::is_sorted(lines.begin(), lines.end())) { throw ConfigError("k-space lines must be sorted"); }
}

} // namespace

ad::Var unrolled_forward(PddlParams const &p, nn::BoundParams const &bound, ad::Var const &x0,
                         ad::EncodingPtr const &ctx)
{
  if (bound.vars.size() != p.params.tensors.size()) { throw ConfigError("unrolled_forward: parameter count mismatch"); }
  ad::Var const mu = ad::exp(bound.vars.back());
  ad::Var x = x0;
  for (int u = 0; u < p.config.n_unrolls; ++u) {
    ad::Var const z = nn::resnet_forward(p.config.prox, bound, 0, x);
    x = cg_unrolled(ad::axpy(x0, mu, z), mu, z, ctx, p.config.n_cg);
  }
  return x;
}

double frame_scale(SampledKSpace const &y, CoilSensitivities const &sens)
{
  double const s = apply_EH(y, sens).abs().maxCoeff();
  if (!(s > 0.0)) { throw NumericalError("frame_scale: E^H y vanishes"); }
  return s;
}

ComplexImage pddl_reconstruct(PddlParams const &p, SampledKSpace const &y, CoilSensitivities const &sens)
{
  require_sorted(y.lines);
  double const s = frame_scale(y, sens);
  auto const ctx = std::make_shared<ad::EncodingContext const>(sens, y.lines);
  ad::Tape tape;
  nn::BoundParams const bound = nn::bind(p.params, tape, false);
  ad::Var const x0 = tape.constant(ad::encode_adjoint_tensor(kspace_tensor(y, s), *ctx));
  ComplexImage out = ad::to_complex(unrolled_forward(p, bound, x0, ctx).value()) * s;
  require_finite(out, "PD-DL reconstruction");
  return out;
}

void validate(PddlTrainConfig const &cfg)
{
  if (cfg.K < 1) { throw ConfigError("PD-DL training needs K >= 1"); }
  if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) { throw ConfigError("rho must lie in (0, 1)"); }
  if (!(cfg.lr > 0.0) || cfg.steps < 1) { throw ConfigError("PD-DL training needs lr > 0 and steps >= 1"); }
  if (cfg.lambda < 0.0) { throw ConfigError("consistency weight must be non-negative"); }
}

ad::Var pddl_loss(PddlParams const &p, nn::BoundParams const &bound, SampledKSpace const &y,
                  CoilSensitivities const &sens, std::vector<SsduSplit> const &splits, PddlTrainConfig const &cfg,
                  ComplexImage const *masked_recon, OvrMask const *mask)
{
  if (splits.empty()) { throw ConfigError("pddl_loss: no SSDU splits"); }
  require_sorted(y.lines);
  ad::Tape &tape = bound.vars.front().tape();
  nn::LossSpec const l1l2{nn::LossKind::NormalizedL1L2};
  double const s = frame_scale(y, sens);

  ad::Var ssdu;
  for (auto const &split : splits) {
    if (split.lambda.empty()) { throw ConfigError("pddl_loss: empty Lambda"); }
    auto const ctx_theta = std::make_shared<ad::EncodingContext const>(sens, split.theta);
    auto const ctx_lambda = std::make_shared<ad::EncodingContext const>(sens, split.lambda);
    ad::Var const x0 = tape.constant(ad::encode_adjoint_tensor(kspace_tensor(y.subset(split.theta), s), *ctx_theta));
    ad::Var const out = unrolled_forward(p, bound, x0, ctx_theta);
    ad::Var const pred = ad::encode(out, ctx_lambda);
    ad::Var const ref = tape.constant(kspace_tensor(y.subset(split.lambda), s));
    ad::Var const l = nn::loss(l1l2, ref, pred);
    ssdu = ssdu ? ad::add(ssdu, l) : l;
  }
  ssdu = ad::scale(ssdu, 1.0 / static_cast<double>(splits.size()));
  if (cfg.lambda == 0.0) { return ssdu; }

  if (!masked_recon || !mask) { throw ConfigError("consistency term needs the masked reconstruction and OVR mask"); }
  auto const ctx = std::make_shared<ad::EncodingContext const>(sens, y.lines);
  ad::Var const x0 = tape.constant(ad::encode_adjoint_tensor(kspace_tensor(y, s), *ctx));
  ad::Var const out = unrolled_forward(p, bound, x0, ctx);
  ad::Tensor ref_t = ad::to_tensor(ComplexImage(*masked_recon / s));
  ad::Var est;
  if (cfg.region == ConsistencyRegion::Roi) {
    RealImage const roi = mask->roi_indicator();
    ad::Var const ref_full = tape.constant(std::move(ref_t));
    ad::Var const ref = ad::mask_mul(ref_full, roi);
    est = ad::mask_mul(out, roi);
    return ad::add(ssdu, ad::scale(nn::loss(l1l2, ref, est), cfg.lambda));
  }
  est = ad::mask_mul(out, mask->mask);
  return ad::add(ssdu, ad::scale(nn::loss(l1l2, tape.constant(std::move(ref_t)), est), cfg.lambda));
}

PddlTrainResult train_pddl(std::vector<SampledKSpace> const &y, CoilSensitivities const &sens,
                           SsduMaskSet const &masks, UnrollConfig const &ucfg, PddlTrainConfig const &cfg,
                           ConsistencyTarget const *consistency, std::function<void(int, double)> const &on_step)
{
  validate(cfg);
  if (y.empty()) { throw ConfigError("train_pddl: no training frames"); }
  if (masks.size() != y.size()) { throw ConfigError("train_pddl: one SSDU mask set per frame required"); }
  if (cfg.lambda > 0.0 && (!consistency || consistency->masked_recon.size() != y.size())) {
    throw ConfigError("train_pddl: consistency term needs a masked reconstruction for every frame");
  }
  PddlTrainResult res{init_pddl(ucfg, cfg.seed), {}, 0};
  nn::AdamState state;
  nn::AdamConfig const adam{cfg.lr};
  Rng rng(mix_seed(cfg.seed, 0x7dd1));
  std::vector<size_t> order(y.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int step = 0; step < cfg.steps; ++step) {
    size_t const pos = static_cast<size_t>(step) % order.size();
    if (pos == 0) {
      for (size_t i = order.size() - 1; i > 0; --i) { std::swap(order[i], order[rng.below(i + 1)]); }
    }
    size_t const t = order[pos];
    auto const &splits = masks[t];
    if (static_cast<int>(splits.size()) < cfg.K) { throw ConfigError("train_pddl: fewer SSDU splits than K"); }
    std::vector<SsduSplit> const use(splits.begin(), splits.begin() + cfg.K);

    ad::Tape tape;
    nn::BoundParams const bound = nn::bind(res.params.params, tape);
    ad::Var const l = pddl_loss(res.params, bound, y[t], sens, use, cfg,
                                consistency ? &consistency->masked_recon[t] : nullptr,
                                consistency ? &consistency->mask : nullptr);
    tape.backward(l);
    std::vector<ad::Tensor> grads;
    grads.reserve(bound.vars.size());
    for (auto const &v : bound.vars) { grads.push_back(v.grad()); }
    res.losses.push_back(l.value().item());
    nn::adam_step(res.params.params.tensors, grads, state, adam);
    if (on_step) { on_step(step, res.losses.back()); }
  }
  res.skipped_steps = state.skipped;
  return res;
}

FrameSeries reconstruct_series(PddlParams const &p, std::vector<SampledKSpace> const &y,
                               CoilSensitivities const &sens, std::vector<ComplexImage> const *backgrounds,
                               OvrMask const *mask, double frame_period)
{
  if (backgrounds && (!mask || backgrounds->size() != y.size())) {
    throw ConfigError("reconstruct_series: one background per frame and an OVR mask are required");
  }
  FrameSeries out;
  out.frame_period = frame_period;
  for (size_t t = 0; t < y.size(); ++t) {
    ComplexImage x = pddl_reconstruct(p, y[t], sens);
    if (backgrounds) { x = compose_final(x, (*backgrounds)[t], *mask); }
    out.frames.push_back(std::move(x));
  }
  return out;
}

void save_pddl(std::filesystem::path const &dir, PddlParams const &p)
{
  nlohmann::json const cfg{{"n_unrolls", p.config.n_unrolls},
                           {"n_cg", p.config.n_cg},
                           {"mu_init", p.config.mu_init},
                           {"prox", p.config.prox.to_json()}};
  nn::save_parameters(dir, p.params, cfg);
}

PddlParams load_pddl(std::filesystem::path const &dir)
{
  nlohmann::json cfg;
  PddlParams p;
  p.params = nn::load_parameters(dir, &cfg);
  p.config.n_unrolls = cfg.at("n_unrolls").get<int>();
  p.config.n_cg = cfg.at("n_cg").get<int>();
  p.config.mu_init = cfg.at("mu_init").get<double>();
  p.config.prox = nn::ResNetConfig::from_json(cfg.at("prox"));
  validate(p.config);
  if (p.params.names.empty() || p.params.names.back() != "log_mu" ||
      p.params.tensors.size() != 5 + 4 * static_cast<size_t>(p.config.prox.blocks)) {
    throw ConfigError("PD-DL checkpoint does not match its configuration");
  }
  return p;
}

} // namespace ovrcine
