#pragma once

#include "ovrcine/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ovrcine::nn {

using ad::Tape;
using ad::Tensor;
using ad::Var;

// Named, ordered learnable tensors.
struct ParameterSet
{
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t scalar_count() const;
  Tensor const &at(std::string const &name) const;
  Tensor &at(std::string const &name);
  void add(std::string name, Tensor t);
};

// inConv (2f -> W) -> blocks x [conv W->W, relu, conv W->W, x block_scale, + skip] -> outConv (W -> 2f).
struct ResNetConfig
{
  int complex_channels = 4; // f
  int width = 32;           // W
  int blocks = 4;           // N_rb
  double block_scale = 0.1;

  nlohmann::json to_json() const;
  static ResNetConfig from_json(nlohmann::json const &j);
};
void validate(ResNetConfig const &cfg);

// 9*2f*W + W + N_rb*2*(9*W*W + W) + 9*W*2f + 2f.
std::size_t resnet_parameter_count(ResNetConfig const &cfg);

struct ResNetParams
{
  ResNetConfig config;
  ParameterSet params;
};

// He-normal kernels, zero biases; the output convolution is scaled by `out_gain`.
ResNetParams init_resnet(ResNetConfig const &cfg, std::uint64_t seed, double out_gain = 0.1);
ResNetParams zero_resnet(ResNetConfig const &cfg);

// Parameters placed on a tape, in ParameterSet order.
struct BoundParams
{
  std::vector<Var> vars;
};
BoundParams bind(ParameterSet const &p, Tape &tape, bool trainable = true);

Var resnet_forward(ResNetConfig const &cfg, BoundParams const &bound, std::size_t first, Var const &x);
Var resnet_forward(ResNetParams const &p, BoundParams const &bound, Var const &x);
// Tape-free evaluation.
Tensor resnet_apply(ResNetParams const &p, Tensor const &x);

struct AdamConfig
{
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState
{
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
  long skipped = 0;
};

// One bias-corrected Adam update. A non-finite gradient skips the step (parameters
// and moments untouched) and increments `skipped`; returns whether it applied.
bool adam_step(std::vector<Tensor> &params, std::vector<Tensor> const &grads, AdamState &state,
               AdamConfig const &cfg);

enum class LossKind
{
  NormalizedL2,
  NormalizedL1L2,
};

struct LossSpec
{
  LossKind kind = LossKind::NormalizedL2;
  double w_l2 = 0.5; // mixed loss only
  double w_l1 = 0.5;
};
void validate(LossSpec const &spec);

// ||ref - est||_2 / ||ref||_2, or w_l2 * that + w_l1 * ||ref - est||_1 / ||ref||_1.
double loss_eval(LossSpec const &spec, Tensor const &ref, Tensor const &est);
Var loss(LossSpec const &spec, Var const &ref, Var const &est);

// Directory with one Float64 OVRT per tensor plus manifest.json {config, tensors}.
void save_parameters(std::filesystem::path const &dir, ParameterSet const &p, nlohmann::json const &config);
ParameterSet load_parameters(std::filesystem::path const &dir, nlohmann::json *config = nullptr);

} // namespace ovrcine::nn
