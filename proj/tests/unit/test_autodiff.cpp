#include "ovrcine/autodiff.hpp"
#include "ovrcine/encoding.hpp"
#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"
#include "ovrcine/phantom.hpp"

#include "support.hpp"

#include <doctest.h>

#include <functional>

using namespace ovrcine;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng &rng, double offset = 0.0)
{
  Tensor t(std::move(shape));
  for (auto &v : t.data) { v = rng.normal() + offset; }
  return t;
}

using Graph = std::function<Var(Tape &, std::vector<Var> const &)>;

// Analytic gradient of every input against central differences (h = 1e-5),
// max-norm relative error over all coordinates of all inputs.
double gradient_error(Graph const &f, std::vector<Tensor> inputs)
{
  Tape tape;
  std::vector<Var> vars;
  for (auto const &t : inputs) { vars.push_back(tape.variable(t)); }
  Var const out = f(tape, vars);
  REQUIRE(out.value().size() == 1);
  tape.backward(out);
  std::vector<Tensor> analytic;
  for (auto const &v : vars) { analytic.push_back(v.grad()); }

  auto eval = [&](std::vector<Tensor> const &in) {
    Tape t;
    std::vector<Var> vs;
    for (auto const &x : in) { vs.push_back(t.variable(x)); }
    return f(t, vs).value().item();
  };
  double const h = 1e-5;
  double err = 0, scale = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      double const x0 = inputs[i].data[j];
      inputs[i].data[j] = x0 + h;
      double const fp = eval(inputs);
      inputs[i].data[j] = x0 - h;
      double const fm = eval(inputs);
      inputs[i].data[j] = x0;
      double const fd = (fp - fm) / (2 * h);
      err = std::max(err, std::abs(fd - analytic[i].data[j]));
      scale = std::max(scale, std::abs(fd));
    }
  }
  return err / std::max(scale, 1e-300);
}

// Contracts a tensor-valued graph with a fixed random weight tensor.
Graph contract(std::function<Var(Tape &, std::vector<Var> const &)> body, Tensor weight)
{
  return [body, weight](Tape &t, std::vector<Var> const &in) { return ad::dot(body(t, in), t.constant(weight)); };
}

CoilSensitivities small_maps(int C, int n)
{
  return make_coil_maps(C, {n, n});
}

} // namespace

TEST_SUITE("autodiff")
{
  TEST_CASE("elementwise primitives pass finite differences")
  {
    Rng rng(1);
    std::vector<int> const sh{2, 3, 4};
    Tensor const w = random_tensor(sh, rng);
    auto a = random_tensor(sh, rng), b = random_tensor(sh, rng);
    auto s = random_tensor({1}, rng);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::add(v[0], v[1]); }, w), {a, b}) < 1e-5);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::sub(v[0], v[1]); }, w), {a, b}) < 1e-5);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::scale(v[0], -1.7); }, w), {a}) < 1e-5);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::mul(v[0], v[1]); }, w), {a, s}) < 1e-5);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::axpy(v[0], v[1], v[2]); }, w), {a, s, b}) <
          1e-5);
    CHECK(gradient_error([](Tape &, auto const &v) { return ad::dot(v[0], v[1]); }, {a, b}) < 1e-5);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::exp(v[0]); }, w), {a}) < 1e-5);
    CHECK(gradient_error([](Tape &, auto const &v) { return ad::sum(v[0]); }, {a}) < 1e-5);
    CHECK(gradient_error([](Tape &, auto const &v) { return ad::l2norm(v[0]); }, {a}) < 1e-5);
    CHECK(gradient_error([](Tape &, auto const &v) { return ad::l1norm(v[0]); }, {a}) < 1e-5);
    auto p = random_tensor({1}, rng, 3.0), q = random_tensor({1}, rng, 3.0);
    CHECK(gradient_error([](Tape &, auto const &v) { return ad::div(v[0], v[1]); }, {p, q}) < 1e-5);
  }

  TEST_CASE("relu: finite differences away from the kink, zero subgradient at it")
  {
    Rng rng(2);
    Tensor x = random_tensor({1, 4, 4}, rng);
    for (auto &v : x.data) {
      if (std::abs(v) < 0.05) { v = 0.3; }
    }
    Tensor const w = random_tensor({1, 4, 4}, rng);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::relu(v[0]); }, w), {x}) < 1e-5);

    Tape tape;
    Var const z = tape.variable(Tensor({1, 1, 3}, 0.0));
    tape.backward(ad::sum(ad::relu(z)));
    for (double g : z.grad().data) { CHECK(g == 0.0); }
  }

  TEST_CASE("channel plumbing passes finite differences")
  {
    Rng rng(3);
    auto x = random_tensor({4, 3, 5}, rng), y = random_tensor({2, 3, 5}, rng);
    RealImage mask = RealImage::Random(3, 5);
    CHECK(gradient_error(contract([mask](Tape &, auto const &v) { return ad::mask_mul(v[0], mask); },
                                  random_tensor({4, 3, 5}, rng)),
                         {x}) < 1e-5);
    CHECK(gradient_error(
            contract([](Tape &, auto const &v) { return ad::slice_channels(v[0], 1, 2); }, random_tensor({2, 3, 5}, rng)),
            {x}) < 1e-5);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::concat_channels({v[0], v[1]}); },
                                  random_tensor({6, 3, 5}, rng)),
                         {x, y}) < 1e-5);
    CHECK(gradient_error(
            contract([](Tape &, auto const &v) { return ad::complex_join(v[0], v[1]); }, random_tensor({4, 3, 5}, rng)),
            {y, y}) < 1e-5);
    Tensor const w1 = random_tensor({2, 3, 5}, rng), w2 = random_tensor({2, 3, 5}, rng);
    CHECK(gradient_error(
            [w1, w2](Tape &t, auto const &v) {
              auto [re, im] = ad::complex_split(v[0]);
              return ad::add(ad::dot(re, t.constant(w1)), ad::dot(im, t.constant(w2)));
            },
            {x}) < 1e-5);
  }

  TEST_CASE("complex layout keeps real and imaginary parts paired")
  {
    Rng rng(4);
    ComplexImage const a = testing::random_image(3, 4, rng), b = testing::random_image(3, 4, rng);
    Tensor const t = ad::to_tensor(std::vector<ComplexImage>{a, b});
    CHECK(t.shape == std::vector<int>{4, 3, 4});
    CHECK(t.data[0] == a(0, 0).real());
    CHECK(t.data[12] == a(0, 0).imag());
    CHECK((ad::to_complex(t, 1) - b).abs().maxCoeff() == 0.0);
  }

  TEST_CASE("conv2d_3x3 passes finite differences")
  {
    Rng rng(5);
    auto x = random_tensor({3, 5, 6}, rng), w = random_tensor({2, 3, 3, 3}, rng), b = random_tensor({2}, rng);
    CHECK(gradient_error(
            contract([](Tape &, auto const &v) { return ad::conv2d_3x3(v[0], v[1], v[2]); }, random_tensor({2, 5, 6}, rng)),
            {x, w, b}) < 1e-5);
  }

  TEST_CASE("conv2d_3x3 matches a direct sum")
  {
    Rng rng(6);
    Tensor const x = random_tensor({2, 4, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    Tape tape;
    Tensor const y = ad::conv2d_3x3(tape.constant(x), tape.constant(w), tape.constant(b)).value();
    auto X = [&](int c, int i, int j) {
      return (i < 0 || i >= 4 || j < 0 || j >= 5) ? 0.0 : x.data[static_cast<std::size_t>((c * 4 + i) * 5 + j)];
    };
    double err = 0;
    for (int o = 0; o < 3; ++o) {
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 5; ++j) {
          double acc = b.data[static_cast<std::size_t>(o)];
          for (int c = 0; c < 2; ++c) {
            for (int di = 0; di < 3; ++di) {
              for (int dj = 0; dj < 3; ++dj) {
                acc += w.data[static_cast<std::size_t>(((o * 2 + c) * 3 + di) * 3 + dj)] * X(c, i + di - 1, j + dj - 1);
              }
            }
          }
          err = std::max(err, std::abs(acc - y.data[static_cast<std::size_t>((o * 4 + i) * 5 + j)]));
        }
      }
    }
    CHECK(err < 1e-12);
  }

  TEST_CASE("Fourier operators pass finite differences and back-propagate through their adjoint")
  {
    Rng rng(7);
    auto x = random_tensor({4, 6, 4}, rng);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::fft2c(v[0]); }, random_tensor({4, 6, 4}, rng)),
                         {x}) < 1e-5);
    CHECK(gradient_error(contract([](Tape &, auto const &v) { return ad::ifft2c(v[0]); }, random_tensor({4, 6, 4}, rng)),
                         {x}) < 1e-5);
    std::vector<int> const lines{0, 2, 5};
    CHECK(gradient_error(contract([lines](Tape &, auto const &v) { return ad::restrict_rows(v[0], lines); },
                                  random_tensor({4, 3, 4}, rng)),
                         {x}) < 1e-5);

    // Backward of fft2c on cotangent g equals ifft2c(g).
    ComplexImage const g = testing::random_image(8, 8, rng);
    Tape tape;
    Var const v = tape.variable(ad::to_tensor(testing::random_image(8, 8, rng)));
    tape.backward(ad::dot(ad::fft2c(v), tape.constant(ad::to_tensor(g))));
    // d/dx Re<g, F x> over the real layout is F^H g.
    CHECK(testing::rel_diff(ad::to_complex(v.grad()), ifft2c(g)) < 1e-13);
  }

  TEST_CASE("encoding operators pass finite differences and match the plain operators")
  {
    Rng rng(8);
    int const n = 8;
    auto ctx = std::make_shared<ad::EncodingContext const>(small_maps(3, n), std::vector<int>{1, 4, 6});
    auto x = random_tensor({2, n, n}, rng), mu = random_tensor({1}, rng, 1.0);
    CHECK(gradient_error(contract([ctx](Tape &, auto const &v) { return ad::encode(v[0], ctx); },
                                  random_tensor({6, 3, n}, rng)),
                         {x}) < 1e-5);
    CHECK(gradient_error(contract([ctx](Tape &, auto const &v) { return ad::gram(v[0], v[1], ctx); },
                                  random_tensor({2, n, n}, rng)),
                         {x, mu}) < 1e-5);

    ComplexImage const xc = ad::to_complex(x);
    SampledKSpace const y = apply_E(xc, ctx->sens, ctx->lines);
    Tensor const enc = ad::encode_tensor(x, *ctx);
    for (int c = 0; c < 3; ++c) { CHECK(testing::rel_diff(ad::to_complex(enc, c), y.coils[c]) < 1e-13); }
    Tensor const g = ad::gram_tensor(x, 0.5, *ctx);
    CHECK(testing::rel_diff(ad::to_complex(g), apply_normal(xc, ctx->sens, ctx->lines, 0.5)) < 1e-13);
    CHECK(testing::rel_diff(ad::to_complex(ad::encode_adjoint_tensor(enc, *ctx)), apply_EH(y, ctx->sens)) < 1e-13);
  }

  TEST_CASE("shape mismatches are rejected while building the graph")
  {
    Tape tape;
    Var const a = tape.variable(Tensor({2, 3, 3}));
    Var const b = tape.variable(Tensor({2, 3, 4}));
    CHECK_THROWS_AS(ad::add(a, b), ConfigError);
    CHECK_THROWS_AS(ad::dot(a, b), ConfigError);
    CHECK_THROWS_AS(ad::conv2d_3x3(a, tape.variable(Tensor({4, 3, 3, 3})), tape.variable(Tensor({4}))), ConfigError);
    CHECK_THROWS_AS(ad::complex_split(tape.variable(Tensor({3, 3, 3}))), ConfigError);
    CHECK_THROWS_AS(ad::div(tape.variable(Tensor::scalar(1.0)), tape.variable(Tensor::scalar(0.0))), NumericalError);
  }

  TEST_CASE("gradients accumulate over shared uses")
  {
    Tape tape;
    Var const x = tape.variable(Tensor({1, 1, 2}, 3.0));
    Var const y = ad::add(x, x);
    tape.backward(ad::dot(y, x));
    // d/dx (2 x . x) = 4 x
    CHECK(x.grad().data[0] == doctest::Approx(12.0));
    Var const c = tape.constant(Tensor({1, 1, 2}, 1.0));
    CHECK_FALSE(c.requires_grad());
  }
}
