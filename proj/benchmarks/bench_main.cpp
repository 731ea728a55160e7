#include "ovrcine/autodiff.hpp"
#include "ovrcine/classical.hpp"
#include "ovrcine/encoding.hpp"
#include "ovrcine/fft.hpp"
#include "ovrcine/nn.hpp"
#include "ovrcine/pddl.hpp"
#include "ovrcine/phantom.hpp"
#include "ovrcine/schedule.hpp"

#include <benchmark/benchmark.h>

using namespace ovrcine;

namespace {

struct DeskData
{
  PhantomTruth truth = make_phantom(PhantomConfig{});
  CoilSensitivities sens = make_coil_maps(6, {64, 64});
  KSpaceSeries ksp = simulate_acquisition(truth, sens, make_schedule(64, 8, 48, 0, true), 0.0, 1);
};

DeskData const &desk()
{
  static DeskData const d;
  return d;
}

void BM_fft2c(benchmark::State &state)
{
  int const n = static_cast<int>(state.range(0));
  ComplexImage const x = ComplexImage::Random(n, n);
  ComplexImage out(n, n);
  for (auto _ : state) {
    fft2c_into(x, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_fft2c)->Arg(64)->Arg(128)->Arg(256);

void BM_resnet_apply(benchmark::State &state)
{
  nn::ResNetConfig const cfg{1, static_cast<int>(state.range(0)), 2, 0.1};
  nn::ResNetParams const p = nn::init_resnet(cfg, 1);
  ad::Tensor const x = ad::to_tensor(desk().truth.frames[0]);
  for (auto _ : state) { benchmark::DoNotOptimize(nn::resnet_apply(p, x).data.data()); }
}
BENCHMARK(BM_resnet_apply)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_gram(benchmark::State &state)
{
  auto const &d = desk();
  ad::EncodingContext const ctx(d.sens, d.ksp[5].lines);
  ad::Tensor const x = ad::to_tensor(d.truth.frames[5]);
  for (auto _ : state) { benchmark::DoNotOptimize(ad::gram_tensor(x, 0.05, ctx).data.data()); }
}
BENCHMARK(BM_gram);

void BM_cg_sense(benchmark::State &state)
{
  auto const &d = desk();
  CgConfig const cfg{static_cast<int>(state.range(0)), 0.0, 0.0};
  for (auto _ : state) { benchmark::DoNotOptimize(cg_sense(d.ksp[5], d.sens, cfg).image.data()); }
}
BENCHMARK(BM_cg_sense)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_unrolled_inference(benchmark::State &state)
{
  auto const &d = desk();
  PddlParams const p = init_pddl(UnrollConfig{}, 1);
  for (auto _ : state) { benchmark::DoNotOptimize(pddl_reconstruct(p, d.ksp[5], d.sens).data()); }
}
BENCHMARK(BM_unrolled_inference)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
