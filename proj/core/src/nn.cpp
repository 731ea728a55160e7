#include "ovrcine/nn.hpp"

#include "ovrcine/error.hpp"
#include "ovrcine/random.hpp"
#include "ovrcine/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ovrcine::nn {

std::size_t ParameterSet::scalar_count() const
{
  std::size_t n = 0;
  for (auto const &t : tensors) { n += t.size(); }
  return n;
}

Tensor const &ParameterSet::at(std::string const &name) const
{
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) { throw ConfigError("parameter not found: " + name); }
  return tensors[static_cast<size_t>(it - names.begin())];
}

Tensor &ParameterSet::at(std::string const &name)
{
  return const_cast<Tensor &>(static_cast<ParameterSet const &>(*this).at(name));
}

void ParameterSet::add(std::string name, Tensor t)
{
  if (std::find(names.begin(), names.end(), name) != names.end()) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  names.push_back(std::move(name));
  tensors.push_back(std::move(t));
}

nlohmann::json ResNetConfig::to_json() const
{
  return {{"complex_channels", complex_channels}, {"width", width}, {"blocks", blocks}, {"block_scale", block_scale}};
}

ResNetConfig ResNetConfig::from_json(nlohmann::json const &j)
{
  ResNetConfig c;
  for (auto const &[k, v] : j.items()) {
    if (k == "complex_channels") {
      c.complex_channels = v.get<int>();
    } else if (k == "width") {
      c.width = v.get<int>();
    } else if (k == "blocks") {
      c.blocks = v.get<int>();
    } else if (k == "block_scale") {
      c.block_scale = v.get<double>();
    } else {
      throw ConfigError("unknown ResNet config key: " + k);
    }
  }
  validate(c);
  return c;
}

void validate(ResNetConfig const &cfg)
{
  if (cfg.complex_channels < 1 || cfg.width < 1 || cfg.blocks < 0) {
    throw ConfigError("ResNet config needs complex_channels >= 1, width >= 1, blocks >= 0");
  }
}

std::size_t resnet_parameter_count(ResNetConfig const &cfg)
{
  std::size_t const f2 = 2 * static_cast<std::size_t>(cfg.complex_channels);
  std::size_t const W = static_cast<std::size_t>(cfg.width);
  std::size_t const N = static_cast<std::size_t>(cfg.blocks);
  return 9 * f2 * W + W + N * 2 * (9 * W * W + W) + 9 * W * f2 + f2;
}

namespace {

std::vector<std::pair<std::string, std::vector<int>>> layer_shapes(ResNetConfig const &cfg)
{
  int const f2 = 2 * cfg.complex_channels, W = cfg.width;
  std::vector<std::pair<std::string, std::vector<int>>> out;
  out.push_back({"in.w", {W, f2, 3, 3}});
  out.push_back({"in.b", {W}});
  for (int i = 0; i < cfg.blocks; ++i) {
    std::string const p = "rb" + std::to_string(i) + ".";
    out.push_back({p + "conv1.w", {W, W, 3, 3}});
    out.push_back({p + "conv1.b", {W}});
    out.push_back({p + "conv2.w", {W, W, 3, 3}});
    out.push_back({p + "conv2.b", {W}});
  }
  out.push_back({"out.w", {f2, W, 3, 3}});
  out.push_back({"out.b", {f2}});
  return out;
}

} // namespace

ResNetParams zero_resnet(ResNetConfig const &cfg)
{
  validate(cfg);
  ResNetParams p{cfg, {}};
  for (auto &[name, shape] : layer_shapes(cfg)) { p.params.add(name, Tensor(shape)); }
  return p;
}

ResNetParams init_resnet(ResNetConfig const &cfg, std::uint64_t seed, double out_gain)
{
  ResNetParams p = zero_resnet(cfg);
  Rng rng(seed);
  for (size_t i = 0; i < p.params.names.size(); ++i) {
    Tensor &t = p.params.tensors[i];
    if (t.shape.size() != 4) { continue; }
    double gain = std::sqrt(2.0 / (9.0 * t.shape[1]));
    if (p.params.names[i] == "out.w") { gain *= out_gain; }
    for (auto &e : t.data) { e = gain * rng.normal(); }
  }
  return p;
}

BoundParams bind(ParameterSet const &p, Tape &tape, bool trainable)
{
  BoundParams b;
  b.vars.reserve(p.tensors.size());
  for (auto const &t : p.tensors) { b.vars.push_back(trainable ? tape.variable(t) : tape.constant(t)); }
  return b;
}

Var resnet_forward(ResNetConfig const &cfg, BoundParams const &bound, std::size_t first, Var const &x)
{
  std::size_t const needed = 4 + 4 * static_cast<std::size_t>(cfg.blocks);
  if (bound.vars.size() < first + needed) { throw ConfigError("resnet_forward: too few bound parameters"); }
  if (x.shape().size() != 3 || x.shape()[0] != 2 * cfg.complex_channels) {
    throw ConfigError("resnet_forward: expected " + std::to_string(2 * cfg.complex_channels) + " input channels");
  }
  auto w = [&](std::size_t i) -> Var const & { return bound.vars[first + i]; };
  Var h = ad::conv2d_3x3(x, w(0), w(1));
  for (int i = 0; i < cfg.blocks; ++i) {
    std::size_t const k = 2 + 4 * static_cast<std::size_t>(i);
    Var r = ad::conv2d_3x3(h, w(k), w(k + 1));
    r = ad::relu(r);
    r = ad::conv2d_3x3(r, w(k + 2), w(k + 3));
    h = ad::add(h, ad::scale(r, cfg.block_scale));
  }
  std::size_t const o = 2 + 4 * static_cast<std::size_t>(cfg.blocks);
  return ad::conv2d_3x3(h, w(o), w(o + 1));
}

Var resnet_forward(ResNetParams const &p, BoundParams const &bound, Var const &x)
{
  return resnet_forward(p.config, bound, 0, x);
}

Tensor resnet_apply(ResNetParams const &p, Tensor const &x)
{
  Tape tape;
  BoundParams b = bind(p.params, tape, false);
  return resnet_forward(p, b, tape.constant(x)).value();
}

bool adam_step(std::vector<Tensor> &params, std::vector<Tensor> const &grads, AdamState &state,
               AdamConfig const &cfg)
{
  if (params.size() != grads.size()) { throw ConfigError("adam_step: parameter/gradient count mismatch"); }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape != grads[i].shape) { throw ConfigError("adam_step: gradient shape mismatch"); }
  }
  for (auto const &g : grads) {
    for (double e : g.data) {
      if (!std::isfinite(e)) {
        ++state.skipped;
        return false;
      }
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  ++state.step;
  double const c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double const c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto &m = state.m[i];
    auto &v = state.v[i];
    auto &p = params[i].data;
    auto const &g = grads[i].data;
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
  return true;
}

void validate(LossSpec const &spec)
{
  if (spec.kind == LossKind::NormalizedL1L2 &&
      (spec.w_l1 < 0 || spec.w_l2 < 0 || std::abs(spec.w_l1 + spec.w_l2 - 1.0) > 1e-12)) {
    throw ConfigError("mixed loss weights must be non-negative and sum to 1");
  }
}

double loss_eval(LossSpec const &spec, Tensor const &ref, Tensor const &est)
{
  validate(spec);
  if (ref.shape != est.shape) { throw ConfigError("loss_eval: shape mismatch"); }
  double d2 = 0, r2 = 0, d1 = 0, r1 = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    double const d = ref.data[i] - est.data[i];
    d2 += d * d;
    r2 += ref.data[i] * ref.data[i];
    d1 += std::abs(d);
    r1 += std::abs(ref.data[i]);
  }
  if (r2 == 0.0) { throw ConfigError("loss_eval: zero-norm reference"); }
  double const l2 = std::sqrt(d2) / std::sqrt(r2);
  if (spec.kind == LossKind::NormalizedL2) { return l2; }
  return spec.w_l2 * l2 + spec.w_l1 * d1 / r1;
}

Var loss(LossSpec const &spec, Var const &ref, Var const &est)
{
  validate(spec);
  Var const diff = ad::sub(ref, est);
  Var const rn2 = ad::l2norm(ref);
  if (rn2.value().item() == 0.0) { throw ConfigError("loss: zero-norm reference"); }
  Var const l2 = ad::div(ad::l2norm(diff), rn2);
  if (spec.kind == LossKind::NormalizedL2) { return l2; }
  Var const l1 = ad::div(ad::l1norm(diff), ad::l1norm(ref));
  return ad::add(ad::scale(l2, spec.w_l2), ad::scale(l1, spec.w_l1));
}

void save_parameters(std::filesystem::path const &dir, ParameterSet const &p, nlohmann::json const &config)
{
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  for (size_t i = 0; i < p.names.size(); ++i) {
    auto const &t = p.tensors[i];
    std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
    std::string const file = p.names[i] + ".ovrt";
    write_ovrt(dir / file, make_tensor(dims, std::span<double const>(t.data)));
    tensors.push_back({{"name", p.names[i]}, {"file", file}, {"shape", t.shape}});
  }
  nlohmann::json manifest{{"config", config}, {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) { throw ConfigError("cannot write " + (dir / "manifest.json").string()); }
  out << manifest.dump(2) << '\n';
}

ParameterSet load_parameters(std::filesystem::path const &dir, nlohmann::json *config)
{
  std::ifstream in(dir / "manifest.json");
  if (!in) { throw ConfigError("missing weight manifest in " + dir.string()); }
  nlohmann::json const manifest = nlohmann::json::parse(in);
  if (config) { *config = manifest.at("config"); }
  ParameterSet p;
  for (auto const &e : manifest.at("tensors")) {
    auto const shape = e.at("shape").get<std::vector<int>>();
    auto const raw = read_ovrt(dir / e.at("file").get<std::string>());
    Tensor t(shape);
    auto const values = raw.as_real();
    if (values.size() != t.size()) { throw ConfigError("weight tensor size disagrees with manifest: " + e.dump()); }
    t.data.assign(values.begin(), values.end());
    p.add(e.at("name").get<std::string>(), std::move(t));
  }
  return p;
}

} // namespace ovrcine::nn
