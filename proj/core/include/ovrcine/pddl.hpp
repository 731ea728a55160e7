#pragma once

#include "ovrcine/autodiff.hpp"
#include "ovrcine/encoding.hpp"
#include "ovrcine/nn.hpp"
#include "ovrcine/outer_volume.hpp"
#include "ovrcine/schedule.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace ovrcine {

// One SSDU split of a frame's acquired lines.
struct SsduSplit
{
  std::vector<int> theta;  // data-fidelity lines
  std::vector<int> lambda; // loss lines
};
// masks[t][k].
using SsduMaskSet = std::vector<std::vector<SsduSplit>>;

// K splits of `omega`: each Lambda holds floor(rho (|omega| - 1)) lines drawn
// uniformly from omega minus `protect`; Theta is the rest. Needs |omega| >= 4.
std::vector<SsduSplit> ssdu_partition(std::vector<int> const &omega, int protect, int K, double rho,
                                      std::uint64_t seed);
// Every frame of a schedule, protecting the acquired line nearest the k-space center.
SsduMaskSet ssdu_partition(SamplingSchedule const &sched, int K, double rho, std::uint64_t seed);

struct UnrollConfig
{
  int n_unrolls = 8;
  int n_cg = 10;
  double mu_init = 0.05;
  nn::ResNetConfig prox{1, 16, 2, 0.1};
};
void validate(UnrollConfig const &cfg);

// Shared proximal ResNet and the data-fidelity weight mu = exp(log_mu). `params`
// holds the ResNet tensors followed by "log_mu".
struct PddlParams
{
  UnrollConfig config;
  nn::ParameterSet params;

  double mu() const;
  nn::ResNetParams prox() const;
};
PddlParams init_pddl(UnrollConfig const &cfg, std::uint64_t seed);

// x0 = E^H y; n_unrolls x [z = prox(x), x = CG_{n_cg}((E^H E + mu) x = x0 + mu z, start z)].
ad::Var unrolled_forward(PddlParams const &p, nn::BoundParams const &bound, ad::Var const &x0,
                         ad::EncodingPtr const &ctx);

// Inference: unrolled_forward on the lines of y with the given maps, scaled by the frame scale.
ComplexImage pddl_reconstruct(PddlParams const &p, SampledKSpace const &y, CoilSensitivities const &sens);

// Scale used for network inputs: max |E^H y|.
double frame_scale(SampledKSpace const &y, CoilSensitivities const &sens);

enum class ConsistencyRegion
{
  Roi,   // compare x_masked and the output on the ROI rows
  Outer, // literal m_OVR weighting of the output
};

struct PddlTrainConfig
{
  int K = 3;
  double rho = 0.4;
  double lr = 2e-4;
  int steps = 200;
  std::uint64_t seed = 5;
  double lambda = 0.0;    // consistency weight; > 0 requires `masked_recon`
  ConsistencyRegion region = ConsistencyRegion::Roi;
};
void validate(PddlTrainConfig const &cfg);

// Consistency-term inputs: the masked-maps reconstruction of every frame and the OVR mask.
struct ConsistencyTarget
{
  std::vector<ComplexImage> masked_recon;
  OvrMask mask;
};

struct PddlTrainResult
{
  PddlParams params;
  std::vector<double> losses; // per step: SSDU term + lambda * consistency
  long skipped_steps = 0;
};

// Frame-level loss of one training example, on a tape with `bound` parameters.
ad::Var pddl_loss(PddlParams const &p, nn::BoundParams const &bound, SampledKSpace const &y,
                  CoilSensitivities const &sens, std::vector<SsduSplit> const &splits, PddlTrainConfig const &cfg,
                  ComplexImage const *masked_recon, OvrMask const *mask);

// Multi-mask SSDU training over the frames of `y` (one frame per step, all K
// splits averaged), optionally with the consistency term.
PddlTrainResult train_pddl(std::vector<SampledKSpace> const &y, CoilSensitivities const &sens,
                           SsduMaskSet const &masks, UnrollConfig const &ucfg, PddlTrainConfig const &cfg,
                           ConsistencyTarget const *consistency = nullptr,
                           std::function<void(int, double)> const &on_step = {});

// Per frame: reconstruct on all acquired lines, then add m * background when given.
FrameSeries reconstruct_series(PddlParams const &p, std::vector<SampledKSpace> const &y,
                               CoilSensitivities const &sens, std::vector<ComplexImage> const *backgrounds,
                               OvrMask const *mask, double frame_period = 0.05);

void save_pddl(std::filesystem::path const &dir, PddlParams const &p);
PddlParams load_pddl(std::filesystem::path const &dir);

} // namespace ovrcine
