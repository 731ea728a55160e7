#include "ovrcine/classical.hpp"
#include "ovrcine/composite.hpp"
#include "ovrcine/encoding.hpp"
#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"
#include "ovrcine/metrics.hpp"
#include "ovrcine/phantom.hpp"
#include "ovrcine/schedule.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace ovrcine;
using testing::rel_diff;

namespace {

struct Scene
{
  PhantomTruth truth;
  CoilSensitivities sens;
};

Scene scene(double contraction = 0.3, int coils = 6)
{
  PhantomConfig pc;
  pc.contraction = contraction;
  return {make_phantom(pc), make_coil_maps(coils, {64, 64})};
}

} // namespace

TEST_SUITE("classical")
{
  TEST_CASE("zero-filled reconstruction")
  {
    Scene const s = scene();
    KSpaceSeries const full = simulate_acquisition(s.truth, s.sens, make_schedule(64, 1, 48, 0), 0.0, 1);
    CHECK(rel_diff(zero_filled(full, 5), s.truth.frames[5]) < 1e-12);

    KSpaceSeries zero = full;
    for (auto &c : zero.frames[3].coils) { c.setZero(); }
    CHECK(zero_filled(zero, 3).abs().maxCoeff() == 0.0);

    // Single unit coil at R=4: the true-location foldover carries 1/R of the image.
    CoilSensitivities unit;
    unit.maps.push_back(ComplexImage::Ones(64, 64));
    PhantomConfig still;
    still.contraction = 0.0;
    PhantomTruth const st = make_phantom(still);
    KSpaceSeries const k4 = simulate_acquisition(st, unit, make_schedule(64, 4, 48, 0), 0.0, 1);
    ComplexImage const zf = zero_filled(k4, 0);
    ComplexImage const central = lattice_alias(st.frames[0], 4, 0, Foldovers::CentralOnly);
    CHECK(rel_diff(central, st.frames[0] / 4.0) < 1e-14);
    CHECK(rel_diff(zf, lattice_alias(st.frames[0], 4, 0)) < 1e-12);
  }

  TEST_CASE("cg_sense inverts full sampling")
  {
    Scene const s = scene();
    KSpaceSeries const full = simulate_acquisition(s.truth, s.sens, make_schedule(64, 1, 48, 0), 0.0, 1);
    CgResult const r = cg_sense(full[7], s.sens, CgConfig{});
    CHECK(rel_diff(r.image, s.truth.frames[7]) < 1e-6);
    CHECK_FALSE(r.diverged);
  }

  TEST_CASE("cg_sense at R=2 reaches 80 dB and decreases the error energy norm")
  {
    Scene const s = scene();
    KSpaceSeries const k2 = simulate_acquisition(s.truth, s.sens, make_schedule(64, 2, 48, 0), 0.0, 1);
    CgConfig cfg;
    cfg.max_iters = 60;
    cfg.rel_tol = 1e-12;
    ComplexImage const &x_true = s.truth.frames[10];
    std::vector<double> energy;
    auto const &lines = k2[10].lines;
    CgResult const r = cg_sense(k2[10], s.sens, cfg, [&](int, ComplexImage const &x) {
      ComplexImage const e = x - x_true;
      energy.push_back(std::real(inner(e, apply_normal(e, s.sens, lines))));
    });
    CHECK(psnr(x_true, r.image) > 80.0);
    REQUIRE(energy.size() >= 2);
    for (std::size_t i = 1; i < energy.size(); ++i) { CHECK(energy[i] <= energy[i - 1] * (1 + 1e-9) + 1e-28); }
  }

  TEST_CASE("cg config validation")
  {
    CHECK_THROWS_AS(validate(CgConfig{0, 1e-6, 0.0}), ConfigError);
    CHECK_THROWS_AS(validate(CgConfig{10, 0.0, 0.0}), ConfigError);
    CHECK_THROWS_AS(validate(CgConfig{10, 1e-6, -1.0}), ConfigError);
  }

  TEST_CASE("grappa kernel geometry")
  {
    Scene const s = scene(0.0);
    std::vector<ComplexImage> acs;
    for (int c = 0; c < 6; ++c) { acs.push_back(fft2c(s.sens[c] * s.truth.frames[0])); }
    GrappaKernel const k1 = grappa_calibrate(acs, 1);
    CHECK(k1.weights.empty());
    GrappaKernel const k4 = grappa_calibrate(acs, 4);
    CHECK(k4.weight_count() == 6u * 3u * 6u * 4u * 5u);
    std::vector<ComplexImage> tiny;
    for (int c = 0; c < 6; ++c) { tiny.push_back(acs[c].topRows(8)); }
    CHECK_THROWS_AS(grappa_calibrate(tiny, 4, false), ConfigError);
  }

  TEST_CASE("grappa reproduces held-out lines of its calibration data")
  {
    Scene const s = scene(0.0);
    std::vector<ComplexImage> acs;
    for (int c = 0; c < 6; ++c) { acs.push_back(fft2c(s.sens[c] * s.truth.frames[0])); }
    for (int R : {2, 4}) {
      GrappaKernel const kernel = grappa_calibrate(acs, R);
      std::vector<int> lattice;
      for (int k = 1; k < 64; k += R) { lattice.push_back(k); }
      SampledKSpace y;
      y.n_pe = 64;
      y.n_fe = 64;
      y.lines = lattice;
      for (int c = 0; c < 6; ++c) {
        ComplexImage rows(static_cast<int>(lattice.size()), 64);
        for (std::size_t j = 0; j < lattice.size(); ++j) { rows.row(static_cast<int>(j)) = acs[c].row(lattice[j]); }
        y.coils.push_back(rows);
      }
      auto const filled = grappa_fill(y, 1, kernel);
      double err = 0, ref = 0;
      for (int c = 0; c < 6; ++c) {
        for (int k = 0; k < 64; ++k) {
          if ((k - 1) % R == 0) {
            CHECK((filled[c].row(k) - acs[c].row(k)).abs().maxCoeff() == 0.0);
            continue;
          }
          err += (filled[c].row(k) - acs[c].row(k)).abs2().sum();
          ref += acs[c].row(k).abs2().sum();
        }
      }
      MESSAGE("R=" << R << " held-out NRMSE " << std::sqrt(err / ref));
      // A 4x5 kernel spans 16 lines at R=4; the heart and rim edges leave 2.4% there.
      CHECK(std::sqrt(err / ref) < (R == 2 ? 0.01 : 0.03));
    }
  }

  TEST_CASE("tgrappa on a static scene")
  {
    Scene const s = scene(0.0);
    KSpaceSeries const k4 = simulate_acquisition(s.truth, s.sens, make_schedule(64, 4, 48, 0, true), 0.0, 1);
    for (int t : {4, 30}) { CHECK(nrmse(s.truth.frames[t], tgrappa_recon(k4, t)) < 0.02); }
  }

  TEST_CASE("tgrappa degrades from R=4 to R=8 on the moving phantom")
  {
    Scene const s = scene();
    SamplingSchedule const low = make_schedule(64, 4, 48, 0, true);
    KSpaceSeries const k4 = simulate_acquisition(s.truth, s.sens, low, 0.0, 1);
    KSpaceSeries const k8 = retro_undersample(k4, 8);
    double p4 = 0, p8 = 0;
    std::vector<int> const frames{6, 9, 18, 21, 30, 33};
    for (int t : frames) {
      p4 += psnr(s.truth.frames[t], tgrappa_recon(k4, t));
      p8 += psnr(s.truth.frames[t], tgrappa_recon(k8, t));
    }
    p4 /= frames.size();
    p8 /= frames.size();
    MESSAGE("tgrappa mean PSNR R=4 " << p4 << " dB, R=8 " << p8 << " dB");
    CHECK(p4 - p8 > 3.0);
  }

  TEST_CASE("grappa leaves acquired samples untouched")
  {
    Scene const s = scene();
    KSpaceSeries const k8 =
      retro_undersample(simulate_acquisition(s.truth, s.sens, make_schedule(64, 4, 48, 0, true), 0.01, 2), 8);
    auto const filled = tgrappa_coil_images(k8, 12);
    for (int c = 0; c < 6; ++c) {
      ComplexImage const kc = fft2c(filled[c]);
      for (std::size_t j = 0; j < k8[12].lines.size(); ++j) {
        int const line = k8[12].lines[j];
        CHECK((kc.row(line) - k8[12].coils[c].row(static_cast<int>(j))).abs().maxCoeff() < 1e-12);
      }
    }
  }
}
