#include "ovrcine/encoding.hpp"
#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"
#include "ovrcine/phantom.hpp"
#include "ovrcine/schedule.hpp"
#include "ovrcine/tensor_io.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

using namespace ovrcine;
using testing::random_image;
using testing::rel_diff;

namespace {

// Straight-line centered orthonormal DFT, O(N^2) per axis, used as an oracle.
ComplexImage naive_fft2c(ComplexImage const &x, int sign)
{
  int const n = static_cast<int>(x.rows()), m = static_cast<int>(x.cols());
  auto dft_axis = [sign](int len, int k, int j) {
    double const a = sign * 2.0 * std::numbers::pi * (k - len / 2) * (j - len / 2) / len;
    return std::polar(1.0 / std::sqrt(len), a);
  };
  ComplexImage tmp = ComplexImage::Zero(n, m), out = ComplexImage::Zero(n, m);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) { tmp.row(k) += dft_axis(n, k, j) * x.row(j); }
  }
  for (int l = 0; l < m; ++l) {
    for (int j = 0; j < m; ++j) { out.col(l) += dft_axis(m, l, j) * tmp.col(j); }
  }
  return out;
}

CoilSensitivities random_maps(int C, Dims d, Rng &rng)
{
  CoilSensitivities s;
  for (int c = 0; c < C; ++c) { s.maps.push_back(random_image(d.n_pe, d.n_fe, rng)); }
  return s;
}

} // namespace

TEST_SUITE("core")
{
  TEST_CASE("fft2c of a centered impulse is flat")
  {
    ComplexImage x = ComplexImage::Zero(64, 32);
    x(32, 16) = 1.0;
    ComplexImage const k = fft2c(x);
    double const expect = 1.0 / std::sqrt(64.0 * 32.0);
    CHECK((k.abs() - expect).abs().maxCoeff() < 1e-15);
  }

  TEST_CASE("fft2c matches a direct DFT")
  {
    Rng rng(3);
    ComplexImage const x = random_image(12, 10, rng);
    CHECK(rel_diff(fft2c(x), naive_fft2c(x, -1)) < 1e-12);
    CHECK(rel_diff(ifft2c(x), naive_fft2c(x, +1)) < 1e-12);
  }

  TEST_CASE("Parseval and round trip")
  {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      ComplexImage const x = random_image(64, 64, rng);
      CHECK(std::abs(norm2(fft2c(x)) - norm2(x)) / norm2(x) < 1e-12);
      CHECK(rel_diff(ifft2c(fft2c(x)), x) < 1e-12);
    }
  }

  TEST_CASE("fft2c rejects non-finite input")
  {
    ComplexImage x = ComplexImage::Zero(8, 8);
    x(2, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fft2c(x), NumericalError);
    x(2, 3) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(ifft2c(x), NumericalError);
  }

  TEST_CASE("make_schedule lattice and tiling")
  {
    SamplingSchedule const s = make_schedule(64, 4, 48, 0);
    std::vector<int> expect;
    for (int k = 0; k < 64; k += 4) { expect.push_back(k); }
    CHECK(s.frame_lines(0) == expect);
    CHECK(s.frame_lines(0).size() == 16);
    for (int start = 0; start + 4 <= 48; start += 5) {
      std::vector<int> count(64, 0);
      for (int t = start; t < start + 4; ++t) {
        for (int k : s.frame_lines(t)) { ++count[static_cast<size_t>(k)]; }
      }
      CHECK(std::all_of(count.begin(), count.end(), [](int c) { return c == 1; }));
    }
    SamplingSchedule const full = make_schedule(64, 1, 5, 0);
    for (int t = 0; t < 5; ++t) { CHECK(full.frame_lines(t).size() == 64); }
  }

  TEST_CASE("make_schedule rejects bad rates")
  {
    CHECK_THROWS_AS(make_schedule(64, 5, 10, 0), ConfigError);
    CHECK_THROWS_AS(make_schedule(64, 4, 10, 4), ConfigError);
  }

  TEST_CASE("center line brings 16 lines to 17 at R=4, 9 at R=8")
  {
    SamplingSchedule const s4 = make_schedule(64, 4, 48, 0, true);
    SamplingSchedule const s8 = retro_undersample(s4, 8);
    for (int t = 0; t < 48; ++t) {
      bool const on = s4.on_lattice(t, 32);
      CHECK(s4.frame_lines(t).size() == (on ? 16u : 17u));
      bool const on8 = s8.on_lattice(t, 32);
      CHECK(s8.frame_lines(t).size() == (on8 ? 8u : 9u));
      auto const &l8 = s8.frame_lines(t);
      CHECK(std::find(l8.begin(), l8.end(), 32) != l8.end());
      // Every retained line was acquired at R=4.
      std::set<int> const acquired(s4.frame_lines(t).begin(), s4.frame_lines(t).end());
      for (int k : l8) { CHECK(acquired.count(k) == 1); }
    }
  }

  TEST_CASE("retro_undersample line counts by enumeration over offsets")
  {
    // Independent count: the R=8 lattice has 8 lines; add one unless it holds 32.
    SamplingSchedule const s4 = make_schedule(64, 4, 8, 0, true);
    SamplingSchedule const s8 = retro_undersample(s4, 8);
    for (int o = 0; o < 8; ++o) {
      std::size_t const expect = 8 + (32 % 8 == o ? 0 : 1);
      CHECK(s8.frame_lines(o).size() == expect);
    }
    CHECK_THROWS_AS(retro_undersample(s4, 6), ConfigError);
  }

  TEST_CASE("apply_E with one unit coil is the Fourier transform")
  {
    Rng rng(11);
    ComplexImage const x = random_image(16, 16, rng);
    CoilSensitivities s;
    s.maps.push_back(ComplexImage::Ones(16, 16));
    std::vector<int> all(16);
    std::iota(all.begin(), all.end(), 0);
    SampledKSpace const y = apply_E(x, s, all);
    CHECK(rel_diff(y.coils[0], fft2c(x)) < 1e-14);
  }

  TEST_CASE("apply_E is linear")
  {
    Rng rng(12);
    CoilSensitivities const s = random_maps(3, {16, 16}, rng);
    std::vector<int> const lines{0, 3, 5, 8, 13};
    ComplexImage const x = random_image(16, 16, rng), z = random_image(16, 16, rng);
    cplx const a{0.3, -1.2}, b{2.0, 0.5};
    SampledKSpace lhs = apply_E(a * x + b * z, s, lines);
    SampledKSpace const ex = apply_E(x, s, lines), ez = apply_E(z, s, lines);
    double err = 0, ref = 0;
    for (int c = 0; c < 3; ++c) {
      err += (lhs.coils[c] - a * ex.coils[c] - b * ez.coils[c]).abs2().sum();
      ref += lhs.coils[c].abs2().sum();
    }
    CHECK(std::sqrt(err / ref) < 1e-12);
  }

  TEST_CASE("adjoint identity against an independently written adjoint")
  {
    Rng rng(13);
    Dims const d{16, 12};
    for (int trial = 0; trial < 100; ++trial) {
      CoilSensitivities const s = random_maps(3, d, rng);
      std::vector<int> lines;
      for (int k = 0; k < d.n_pe; ++k) {
        if (rng.uniform() < 0.4) { lines.push_back(k); }
      }
      if (lines.empty()) { lines.push_back(static_cast<int>(rng.below(16))); }
      ComplexImage const x = random_image(d.n_pe, d.n_fe, rng);
      SampledKSpace y = apply_E(x, s, lines);
      for (auto &c : y.coils) { c = random_image(static_cast<int>(c.rows()), d.n_fe, rng); }

      // E^H from the direct DFT: zero-fill, inverse DFT, conj-weight.
      ComplexImage eh = ComplexImage::Zero(d.n_pe, d.n_fe);
      for (int c = 0; c < 3; ++c) {
        ComplexImage dense = ComplexImage::Zero(d.n_pe, d.n_fe);
        for (std::size_t j = 0; j < lines.size(); ++j) { dense.row(lines[j]) = y.coils[c].row(static_cast<int>(j)); }
        eh += s[c].conjugate() * naive_fft2c(dense, +1);
      }
      double const scale = norm2(x) * norm2(y);
      CHECK(std::abs(inner(apply_E(x, s, lines), y) - inner(x, eh)) / scale < 1e-12);
      CHECK(std::abs(inner(apply_E(x, s, lines), y) - inner(x, apply_EH(y, s))) / scale < 1e-12);
    }
  }

  TEST_CASE("E^H E is the identity under full sampling with normalized maps")
  {
    Rng rng(14);
    CoilSensitivities const s = make_coil_maps(6, {32, 32});
    std::vector<int> all(32);
    std::iota(all.begin(), all.end(), 0);
    ComplexImage const x = random_image(32, 32, rng);
    CHECK(rel_diff(apply_EH(apply_E(x, s, all), s), x) < 1e-12);
    SampledKSpace z = apply_E(x, s, all);
    z *= 0.0;
    CHECK(apply_EH(z, s).abs().maxCoeff() == 0.0);
  }

  TEST_CASE("single-coil R=4 adjoint shows foldovers at n/4 offsets")
  {
    Rng rng(15);
    int const n = 32, R = 4;
    ComplexImage const x = random_image(n, 8, rng);
    CoilSensitivities s;
    s.maps.push_back(ComplexImage::Ones(n, 8));
    SamplingSchedule const sch = make_schedule(n, R, 4, 0);
    for (int t = 0; t < R; ++t) {
      int const o = sch.offset(t);
      // Zero-filled grid with lines k = o mod R: the centered DFT gives
      // (1/R) sum_p exp(2 pi i p (n/2 - o) / R) x[y + p n/R].
      ComplexImage expect = ComplexImage::Zero(n, 8);
      for (int p = 0; p < R; ++p) {
        cplx const w = std::polar(1.0 / R, 2.0 * std::numbers::pi * p * (n / 2 - o) / R);
        for (int y = 0; y < n; ++y) { expect.row(y) += w * x.row((y + p * n / R) % n); }
      }
      CHECK(rel_diff(apply_EH(apply_E(x, s, sch.frame_lines(t)), s), expect) < 1e-12);
    }
  }

  TEST_CASE("apply_E rejects out-of-range lines")
  {
    Rng rng(16);
    CoilSensitivities const s = random_maps(1, {8, 8}, rng);
    CHECK_THROWS_AS(apply_E(random_image(8, 8, rng), s, {0, 8}), ConfigError);
  }

  TEST_CASE("OVRT layout and round trip")
  {
    std::vector<cplx> v{{1.0, 2.0}, {-3.5, 0.25}};
    Tensor const t = make_tensor({1, 2}, std::span<cplx const>(v));
    auto const bytes = encode_ovrt(t);
    REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 2 * 8 + 2 * 16);
    CHECK(std::string(reinterpret_cast<char const *>(bytes.data()), 4) == "OVRT");
    CHECK(static_cast<int>(bytes[4]) == 1);  // version, little-endian
    CHECK(static_cast<int>(bytes[8]) == 1);  // complex128
    CHECK(static_cast<int>(bytes[12]) == 2); // ndim
    Tensor const back = decode_ovrt(bytes);
    CHECK(back.dims == t.dims);
    CHECK(back.as_complex() == v);

    auto dir = testing::scratch_dir("ovrt");
    Rng rng(17);
    std::vector<ComplexImage> const stack{random_image(5, 7, rng), random_image(5, 7, rng)};
    write_ovrt(dir / "s.ovrt", pack_stack(stack));
    auto const loaded = unpack_stack(read_ovrt(dir / "s.ovrt"));
    REQUIRE(loaded.size() == 2);
    CHECK((loaded[1] - stack[1]).abs().maxCoeff() == 0.0);

    std::vector<std::byte> bad = bytes;
    bad[0] = std::byte{'X'};
    CHECK_THROWS(decode_ovrt(bad));
  }

  TEST_CASE("packed k-space keeps sampled rows only")
  {
    PhantomConfig pc;
    pc.n_pe = 32;
    pc.n_fe = 32;
    pc.T = 8;
    pc.r0 = 5;
    pc.heart_row = 16;
    pc.heart_col = 16;
    PhantomTruth const truth = make_phantom(pc);
    CoilSensitivities const sens = make_coil_maps(2, {32, 32});
    KSpaceSeries const ksp = simulate_acquisition(truth, sens, make_schedule(32, 4, 8, 0, true), 0.01, 3);
    PackedKSpace const packed = pack_kspace(ksp);
    auto const frames = unpack_kspace(packed.data, packed.line_mask);
    REQUIRE(frames.size() == 8);
    for (int t = 0; t < 8; ++t) {
      CHECK(frames[t].lines == ksp[t].lines);
      CHECK((frames[t].coils[1] - ksp[t].coils[1]).abs().maxCoeff() == 0.0);
    }
  }
}
