#include "ovrcine/ghostnet.hpp"

#include "ovrcine/error.hpp"
#include "ovrcine/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ovrcine {

void validate(GhostNetConfig const &cfg)
{
  validate(cfg.net);
  if (cfg.net.complex_channels != 4) { throw ConfigError("ghost net takes 4 composite frames (complex_channels = 4)"); }
  if (cfg.steps < 1 || cfg.lr <= 0.0) { throw ConfigError("ghost net needs steps >= 1 and lr > 0"); }
}

std::array<int, 4> ghost_window(int t0, int T)
{
  if (T < 1 || t0 < 0 || t0 >= T) { throw ConfigError("ghost_window: frame out of range"); }
  std::array<int, 4> w{};
  for (int i = 0; i < 4; ++i) { w[static_cast<size_t>(i)] = std::clamp(t0 - 2 + i, 0, T - 1); }
  return w;
}

namespace {

double max_abs(std::vector<ComplexImage const *> const &xs)
{
  double m = 0.0;
  for (auto const *x : xs) { m = std::max(m, x->abs().maxCoeff()); }
  return m;
}

ad::Tensor stack_scaled(std::vector<ComplexImage const *> const &xs, double scale)
{
  std::vector<ComplexImage> scaled;
  scaled.reserve(xs.size());
  for (auto const *x : xs) { scaled.push_back(*x / scale); }
  return ad::to_tensor(scaled);
}

std::vector<ComplexImage const *> window_coil(std::vector<CoilImages> const &series, int t0, int coil)
{
  std::vector<ComplexImage const *> out;
  for (int t : ghost_window(t0, static_cast<int>(series.size()))) {
    auto const &frame = series[static_cast<size_t>(t)];
    if (coil < 0 || coil >= static_cast<int>(frame.size())) { throw ConfigError("ghost dataset: coil out of range"); }
    out.push_back(&frame[static_cast<size_t>(coil)]);
  }
  return out;
}

} // namespace

ad::Tensor ghost_input(std::vector<CoilImages> const &composites, int t0, int coil, double &scale)
{
  auto const xs = window_coil(composites, t0, coil);
  scale = max_abs(xs);
  if (scale == 0.0) { throw NumericalError("ghost_input: all-zero composite window"); }
  return stack_scaled(xs, scale);
}

std::vector<GhostSample> make_ghost_dataset(std::vector<CoilImages> const &composites,
                                            std::vector<CoilImages> const &labels, std::vector<int> const &frames)
{
  if (composites.size() != labels.size()) { throw ConfigError("ghost dataset: composites and labels differ in length"); }
  std::vector<GhostSample> out;
  for (int t : frames) {
    int const C = static_cast<int>(composites.at(static_cast<size_t>(t)).size());
    for (int c = 0; c < C; ++c) {
      GhostSample s;
      s.frame = t;
      s.coil = c;
      s.input = ghost_input(composites, t, c, s.scale);
      s.label = stack_scaled(window_coil(labels, t, c), s.scale);
      out.push_back(std::move(s));
    }
  }
  return out;
}

ad::Var ghost_loss(nn::ResNetParams const &p, nn::BoundParams const &bound, GhostSample const &s)
{
  nn::Tape &tape = bound.vars.front().tape();
  ad::Var const out = nn::resnet_forward(p, bound, tape.constant(s.input));
  return nn::loss({nn::LossKind::NormalizedL2}, tape.constant(s.label), out);
}

GhostTrainResult train_ghost_net(std::vector<GhostSample> const &dataset, GhostNetConfig const &cfg)
{
  validate(cfg);
  if (dataset.empty()) { throw ConfigError("train_ghost_net: empty dataset"); }
  GhostTrainResult res{nn::init_resnet(cfg.net, cfg.seed), {}, 0};
  nn::AdamState state;
  nn::AdamConfig const adam{cfg.lr};
  Rng rng(mix_seed(cfg.seed, 0x6057));
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int step = 0; step < cfg.steps; ++step) {
    size_t const pos = static_cast<size_t>(step) % order.size();
    if (pos == 0) {
      for (size_t i = order.size() - 1; i > 0; --i) { std::swap(order[i], order[rng.below(i + 1)]); }
    }
    nn::Tape tape;
    nn::BoundParams const bound = nn::bind(res.params.params, tape);
    ad::Var const l = ghost_loss(res.params, bound, dataset[order[pos]]);
    tape.backward(l);
    std::vector<ad::Tensor> grads;
    grads.reserve(bound.vars.size());
    for (auto const &v : bound.vars) { grads.push_back(v.grad()); }
    res.losses.push_back(l.value().item());
    nn::adam_step(res.params.params.tensors, grads, state, adam);
  }
  res.skipped_steps = state.skipped;
  return res;
}

CoilImages predict_ghost(nn::ResNetParams const &p, std::vector<CoilImages> const &composites, int t0)
{
  int constexpr slot = 2; // window slot of t0 (clamping never moves it)
  CoilImages ghost;
  int const C = static_cast<int>(composites[static_cast<size_t>(t0)].size());
  for (int c = 0; c < C; ++c) {
    double scale = 1.0;
    ad::Tensor const in = ghost_input(composites, t0, c, scale);
    ad::Tensor const out = nn::resnet_apply(p, in);
    ghost.push_back(ad::to_complex(out, slot) * scale);
  }
  return ghost;
}

CoilImages estimate_background(CoilImages const &composite, CoilImages const &ghost)
{
  if (composite.size() != ghost.size()) { throw ConfigError("estimate_background: coil count mismatch"); }
  CoilImages bg;
  for (size_t c = 0; c < composite.size(); ++c) { bg.push_back(composite[c] - ghost[c]); }
  return bg;
}

} // namespace ovrcine
