#include "ovrcine/error.hpp"
#include "ovrcine/ghostnet.hpp"
#include "ovrcine/nn.hpp"
#include "ovrcine/random.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace ovrcine;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng &rng)
{
  Tensor t(std::move(shape));
  for (auto &v : t.data) { v = rng.normal(); }
  return t;
}

// Smooth-ish field: a few low-frequency cosines per channel.
Tensor smooth_tensor(int ch, int h, int w, Rng &rng)
{
  Tensor t({ch, h, w});
  for (int c = 0; c < ch; ++c) {
    double const a = rng.normal(), b = rng.normal(), fx = 1 + rng.below(3), fy = 1 + rng.below(3);
    for (int r = 0; r < h; ++r) {
      for (int q = 0; q < w; ++q) {
        t.plane(c)[r * w + q] = a * std::cos(2 * M_PI * fy * r / h) + b * std::sin(2 * M_PI * fx * q / w);
      }
    }
  }
  return t;
}

double max_abs_diff(Tensor const &a, Tensor const &b)
{
  REQUIRE(a.shape == b.shape);
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) { m = std::max(m, std::abs(a.data[i] - b.data[i])); }
  return m;
}

} // namespace

TEST_SUITE("nn")
{
  TEST_CASE("parameter count matches the closed form and the tensors")
  {
    // Hand-expanded: in 9*8*32+32, blocks 4*2*(9*32*32+32), out 9*32*8+8.
    nn::ResNetConfig const desk{4, 32, 4, 0.1};
    CHECK(nn::resnet_parameter_count(desk) == 2336u + 73984u + 2312u);
    CHECK(nn::init_resnet(desk, 1).params.scalar_count() == nn::resnet_parameter_count(desk));

    // Ghost network at full size: 8 channels, 15 blocks, width 64.
    nn::ResNetConfig const ghost{4, 64, 15, 0.1};
    CHECK(nn::resnet_parameter_count(ghost) == 4672u + 1107840u + 4616u);
    CHECK(nn::init_resnet(ghost, 1).params.scalar_count() == nn::resnet_parameter_count(ghost));

    // Proximal network at full size: 2 channels.
    nn::ResNetConfig const prox{1, 64, 15, 0.1};
    CHECK(nn::resnet_parameter_count(prox) == 1216u + 1107840u + 1154u);

    CHECK_THROWS_AS(nn::validate(nn::ResNetConfig{0, 8, 1, 0.1}), ConfigError);
    CHECK_THROWS_AS(nn::validate(nn::ResNetConfig{1, 0, 1, 0.1}), ConfigError);
  }

  TEST_CASE("zero weights give a zero output")
  {
    nn::ResNetParams const p = nn::zero_resnet({2, 8, 2, 0.1});
    Rng rng(3);
    Tensor const out = nn::resnet_apply(p, random_tensor({4, 10, 12}, rng));
    for (double v : out.data) { CHECK(v == 0.0); }
  }

  TEST_CASE("tape-free and taped forward agree")
  {
    nn::ResNetParams const p = nn::init_resnet({1, 6, 2, 0.1}, 5, 1.0);
    Rng rng(8);
    Tensor const x = random_tensor({2, 9, 7}, rng);
    Tape tape;
    nn::BoundParams const b = nn::bind(p.params, tape, false);
    CHECK(max_abs_diff(nn::resnet_forward(p, b, tape.constant(x)).value(), nn::resnet_apply(p, x)) == 0.0);
    CHECK_THROWS_AS(nn::resnet_apply(p, random_tensor({4, 9, 7}, rng)), ConfigError);
  }

  TEST_CASE("resnet parameter gradients match finite differences")
  {
    nn::ResNetParams p = nn::init_resnet({1, 3, 1, 0.1}, 2, 1.0);
    Rng rng(17);
    // Nudge biases off zero so relu kinks sit away from typical activations.
    for (std::size_t i = 0; i < p.params.tensors.size(); ++i) {
      if (p.params.tensors[i].shape.size() == 1) {
        for (auto &v : p.params.tensors[i].data) { v = 0.1 * rng.normal(); }
      }
    }
    Tensor const x = random_tensor({2, 5, 6}, rng);
    Tensor const w = random_tensor({2, 5, 6}, rng);
    auto objective = [&](nn::ParameterSet const &ps, std::vector<Tensor> *grads) {
      Tape tape;
      nn::BoundParams const b = nn::bind(ps, tape);
      Var const out = ad::dot(nn::resnet_forward(p.config, b, 0, tape.constant(x)), tape.constant(w));
      if (grads) {
        tape.backward(out);
        for (auto const &v : b.vars) { grads->push_back(v.grad()); }
      }
      return out.value().item();
    };
    std::vector<Tensor> analytic;
    objective(p.params, &analytic);
    double err = 0, scale = 0;
    double const h = 1e-6;
    for (std::size_t i = 0; i < p.params.tensors.size(); ++i) {
      for (std::size_t j = 0; j < p.params.tensors[i].size(); j += 3) {
        nn::ParameterSet q = p.params;
        q.tensors[i].data[j] += h;
        double const fp = objective(q, nullptr);
        q.tensors[i].data[j] -= 2 * h;
        double const fm = objective(q, nullptr);
        double const fd = (fp - fm) / (2 * h);
        err = std::max(err, std::abs(fd - analytic[i].data[j]));
        scale = std::max(scale, std::abs(fd));
      }
    }
    CHECK(err / scale < 1e-5);
  }

  TEST_CASE("adam matches a hand calculation")
  {
    nn::AdamConfig const cfg{0.01, 0.9, 0.999, 1e-8};
    std::vector<Tensor> p{Tensor({1}, 1.0)};
    nn::AdamState st;
    REQUIRE(nn::adam_step(p, {Tensor({1}, 2.0)}, st, cfg));
    // m = 0.2, v = 0.004, bias-corrected 2 and 4.
    double expect = 1.0 - 0.01 * 2.0 / (2.0 + 1e-8);
    CHECK(p[0].item() == doctest::Approx(expect).epsilon(1e-15));
    REQUIRE(nn::adam_step(p, {Tensor({1}, -1.0)}, st, cfg));
    double const m = 0.9 * 0.2 - 0.1, v = 0.999 * 0.004 + 0.001;
    expect -= 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    CHECK(p[0].item() == doctest::Approx(expect).epsilon(1e-14));
    CHECK(st.step == 2);
  }

  TEST_CASE("adam with zero gradient leaves parameters fixed")
  {
    std::vector<Tensor> p{Tensor({3}, 0.7)};
    nn::AdamState st;
    nn::adam_step(p, {Tensor({3}, 0.0)}, st, {});
    for (double v : p[0].data) { CHECK(v == 0.7); }
  }

  TEST_CASE("adam skips non-finite gradients")
  {
    std::vector<Tensor> p{Tensor({2}, 1.0)};
    nn::AdamState st;
    nn::adam_step(p, {Tensor({2}, 0.5)}, st, {});
    std::vector<Tensor> const before = p;
    auto const m_before = st.m;
    Tensor bad({2}, 0.5);
    bad.data[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(nn::adam_step(p, {bad}, st, {}));
    bad.data[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(nn::adam_step(p, {bad}, st, {}));
    CHECK(st.skipped == 2);
    CHECK(st.step == 1);
    CHECK(max_abs_diff(p[0], before[0]) == 0.0);
    CHECK(st.m == m_before);
    CHECK_THROWS_AS(nn::adam_step(p, {Tensor({3}, 0.0)}, st, {}), ConfigError);
  }

  TEST_CASE("loss values")
  {
    Tensor ref({2});
    ref.data = {3.0, 4.0};
    Tensor const zero({2}, 0.0);
    nn::LossSpec const l2{nn::LossKind::NormalizedL2};
    nn::LossSpec const mixed{nn::LossKind::NormalizedL1L2, 0.5, 0.5};
    CHECK(nn::loss_eval(l2, ref, zero) == doctest::Approx(1.0));
    CHECK(nn::loss_eval(mixed, ref, zero) == doctest::Approx(1.0));
    CHECK(nn::loss_eval(mixed, ref, ref) == 0.0);
    Tensor est({2});
    est.data = {3.0, 0.0};
    // l2: 4/5, l1: 4/7.
    CHECK(nn::loss_eval(mixed, ref, est) == doctest::Approx(0.5 * 0.8 + 0.5 * 4.0 / 7.0));

    Tape tape;
    Var const v = nn::loss(mixed, tape.constant(ref), tape.variable(est));
    CHECK(v.value().item() == doctest::Approx(nn::loss_eval(mixed, ref, est)).epsilon(1e-15));

    CHECK_THROWS_AS(nn::validate(nn::LossSpec{nn::LossKind::NormalizedL1L2, 0.7, 0.7}), ConfigError);
    CHECK_THROWS_AS(nn::validate(nn::LossSpec{nn::LossKind::NormalizedL1L2, 1.5, -0.5}), ConfigError);
    CHECK_THROWS_AS(nn::loss_eval(l2, zero, ref), ConfigError);
  }

  TEST_CASE("parameters survive a save/load round trip")
  {
    nn::ResNetParams const p = nn::init_resnet({2, 4, 2, 0.1}, 9);
    auto const dir = testing::scratch_dir("nn_roundtrip");
    nn::save_parameters(dir, p.params, p.config.to_json());
    nlohmann::json cfg;
    nn::ParameterSet const q = nn::load_parameters(dir, &cfg);
    CHECK(q.names == p.params.names);
    for (std::size_t i = 0; i < q.tensors.size(); ++i) { CHECK(max_abs_diff(q.tensors[i], p.params.tensors[i]) == 0.0); }
    nn::ResNetConfig const back = nn::ResNetConfig::from_json(cfg);
    CHECK(back.width == 4);
    CHECK(back.blocks == 2);
    CHECK(back.block_scale == 0.1);
    CHECK_THROWS(nn::load_parameters(dir / "absent"));
  }

  TEST_CASE("ghost loss depends on every output frame")
  {
    nn::ResNetParams const p = nn::init_resnet({4, 4, 1, 0.1}, 4, 1.0);
    Rng rng(30);
    GhostSample s;
    s.input = random_tensor({8, 8, 8}, rng);
    s.label = random_tensor({8, 8, 8}, rng);
    auto eval = [&](GhostSample const &g) {
      Tape tape;
      return ghost_loss(p, nn::bind(p.params, tape, false), g).value().item();
    };
    double const base = eval(s);
    for (int frame = 0; frame < 4; ++frame) {
      GhostSample t = s;
      for (int ch = 2 * frame; ch < 2 * frame + 2; ++ch) {
        for (int i = 0; i < 64; ++i) { t.label.plane(ch)[i] += 0.5; }
      }
      CHECK(eval(t) != doctest::Approx(base).epsilon(1e-6));
    }
  }

  TEST_CASE("ghost window clamps at the edges")
  {
    CHECK(ghost_window(0, 48) == std::array<int, 4>{0, 0, 0, 1});
    CHECK(ghost_window(10, 48) == std::array<int, 4>{8, 9, 10, 11});
    CHECK(ghost_window(47, 48) == std::array<int, 4>{45, 46, 47, 47});
    CHECK_THROWS_AS(ghost_window(48, 48), ConfigError);
  }

  TEST_CASE("ghost training halves the loss on an overfit sample")
  {
    Rng rng(12);
    GhostSample s;
    s.input = smooth_tensor(8, 16, 16, rng);
    s.label = s.input;
    for (auto &v : s.label.data) { v *= 0.5; }
    GhostNetConfig cfg;
    cfg.net = {4, 16, 2, 0.1};
    cfg.steps = 200;
    cfg.lr = 1e-3;
    GhostTrainResult const r = train_ghost_net({s}, cfg);
    REQUIRE(r.losses.size() == 200u);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
      first += r.losses[static_cast<std::size_t>(i)];
      last += r.losses[r.losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    MESSAGE("ghost loss " << first / 10 << " -> " << last / 10);
    CHECK(last <= 0.5 * first);
    CHECK(r.skipped_steps == 0);

    GhostTrainResult const again = train_ghost_net({s}, cfg);
    CHECK(again.losses == r.losses);
    for (std::size_t i = 0; i < r.params.params.tensors.size(); ++i) {
      CHECK(max_abs_diff(again.params.params.tensors[i], r.params.params.tensors[i]) == 0.0);
    }
  }

  TEST_CASE("network commutes with FE translations away from the borders")
  {
    nn::ResNetParams p = nn::init_resnet({1, 6, 2, 0.1}, 21, 1.0);
    Rng rng(2);
    for (auto &t : p.params.tensors) {
      if (t.shape.size() == 1) {
        for (auto &v : t.data) { v = 0.1 * rng.normal(); }
      }
    }
    int const H = 12, W = 48, d = 4;
    Tensor const x = random_tensor({2, H, W}, rng);
    Tensor y({2, H, W});
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < H; ++r) {
        for (int q = 0; q < W; ++q) { y.plane(c)[r * W + (q + d) % W] = x.plane(c)[r * W + q]; }
      }
    }
    Tensor const fx = nn::resnet_apply(p, x), fy = nn::resnet_apply(p, y);
    // Six 3x3 convolutions: receptive radius 6, so columns [6 + d, W - 6) are exact.
    double err = 0;
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < H; ++r) {
        for (int q = 6 + d; q < W - 6; ++q) {
          err = std::max(err, std::abs(fy.plane(c)[r * W + q] - fx.plane(c)[r * W + q - d]));
        }
      }
    }
    CHECK(err < 1e-12);
  }
}
