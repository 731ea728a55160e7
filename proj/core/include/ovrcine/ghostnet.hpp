#pragma once

#include "ovrcine/autodiff.hpp"
#include "ovrcine/image.hpp"
#include "ovrcine/nn.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace ovrcine {

struct GhostNetConfig
{
  nn::ResNetConfig net{4, 32, 4, 0.1};
  int steps = 200;
  double lr = 1e-3;
  std::uint64_t seed = 11;
};
void validate(GhostNetConfig const &cfg);

// Frames t0-2 .. t0+1, clamped to [0, T).
std::array<int, 4> ghost_window(int t0, int T);

// One coil, one target frame: the 4 window composites as 8 real channels and the
// matching ghost labels, both divided by `scale` = max |input|.
struct GhostSample
{
  ad::Tensor input;
  ad::Tensor label;
  double scale = 1.0;
  int frame = 0;
  int coil = 0;
};

// composites[t][c], labels[t][c]. Builds samples for every coil of every listed frame.
std::vector<GhostSample> make_ghost_dataset(std::vector<CoilImages> const &composites,
                                            std::vector<CoilImages> const &labels, std::vector<int> const &frames);
ad::Tensor ghost_input(std::vector<CoilImages> const &composites, int t0, int coil, double &scale);

// Normalized-l2 loss over all four output frames.
ad::Var ghost_loss(nn::ResNetParams const &p, nn::BoundParams const &bound, GhostSample const &s);

struct GhostTrainResult
{
  nn::ResNetParams params;
  std::vector<double> losses; // per step
  long skipped_steps = 0;
};
GhostTrainResult train_ghost_net(std::vector<GhostSample> const &dataset, GhostNetConfig const &cfg);

// Ghost estimate for frame t0 (the t0 slice of the network output), per coil.
CoilImages predict_ghost(nn::ResNetParams const &p, std::vector<CoilImages> const &composites, int t0);

// x_background(t0) = x_com(t0) - ghost(t0), per coil.
CoilImages estimate_background(CoilImages const &composite, CoilImages const &ghost);

} // namespace ovrcine
