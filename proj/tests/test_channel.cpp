#include <cmath>
#include <cstdio>

#include "beamsense/calibration.hpp"
#include "beamsense/channel.hpp"
#include "beamsense/error.hpp"
#include "doctest.h"

using namespace beamsense;

TEST_CASE("misalignment loss on the parabolic main lobe") {
  GainModel g;
  g.hpbw_deg = 7.0;
  CHECK(misalignment_loss(g, {0.0, 0.0}) == 0.0);
  CHECK(misalignment_loss(g, {3.5, 0.0}) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(misalignment_loss(g, {0.0, 7.0}) == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(misalignment_loss(g, {20.0, 20.0}) == g.loss_floor_db);

  // Independent evaluation of min(floor, 12 (r/h)^2) and monotonicity in r.
  double prev = -1.0;
  for (int i = 0; i <= 400; ++i) {
    const double r = 0.05 * i;
    const double want = std::min(g.loss_floor_db, 12.0 * (r / 7.0) * (r / 7.0));
    const double got = misalignment_loss(g, {r, 0.0});
    REQUIRE(got == doctest::Approx(want).epsilon(1e-12));
    REQUIRE(got >= prev);
    prev = got;
  }
}

TEST_CASE("misalignment loss depends on the offset only through its magnitude") {
  GainModel g;
  for (double r : {0.5, 2.0, 4.0, 9.0}) {
    const double ref = misalignment_loss(g, {r, 0.0});
    for (int k = 1; k < 16; ++k) {
      const double a = 2.0 * M_PI * k / 16.0;
      REQUIRE(misalignment_loss(g, {r * std::cos(a), r * std::sin(a)}) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("gain model validation") {
  GainModel g;
  g.hpbw_deg = 0.0;
  CHECK_THROWS_AS(validate(g), ValidationError);
  g = GainModel{};
  g.loss_floor_db = 3.0;
  CHECK_THROWS_AS(validate(g), ValidationError);
  g = GainModel{};
  g.noise_sigma_db = -0.1;
  CHECK_THROWS_AS(validate(g), ValidationError);
}

TEST_CASE("noise-free power trace is the exact pointwise transform") {
  auto p = table_profile("vr");
  p.plane_to_angle = 3.0;
  const auto walk = synth_walk(p, 2000.0, 1.0, 8);
  GainModel g;
  g.noise_sigma_db = 0.0;
  const auto pt = to_power_trace(walk, g, 1);
  REQUIRE(pt.samples.size() == walk.samples.size());
  CHECK(pt.dt_ms == walk.dt_ms);
  CHECK(pt.app_id == walk.app_id);
  for (std::size_t k = 0; k < pt.samples.size(); ++k) {
    const auto& a = walk.samples[k];
    const double r = std::hypot(a.x, a.y);
    REQUIRE(pt.samples[k] == doctest::Approx(g.p0_db - std::min(g.loss_floor_db, 12.0 * r * r / 49.0)).epsilon(1e-12));
    REQUIRE(pt.samples[k] <= g.p0_db);
  }
  const auto again = to_power_trace(walk, g, 99);
  CHECK(again.samples == pt.samples);

  BeamCenterTrace still;
  still.samples.assign(50, {0.0, 0.0});
  for (double v : to_power_trace(still, g, 3).samples) REQUIRE(v == g.p0_db);
}

TEST_CASE("noisy power trace is seeded and bounded") {
  auto p = table_profile("racing");
  p.plane_to_angle = 10.0;
  const auto walk = synth_walk(p, 3000.0, 1.0, 2);
  GainModel g;
  const auto a = to_power_trace(walk, g, 5), b = to_power_trace(walk, g, 5), c = to_power_trace(walk, g, 6);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
  for (double v : a.samples) REQUIRE(v <= g.p0_db + 6.0 * g.noise_sigma_db);

  // Residual noise has the configured spread.
  GainModel quiet = g;
  quiet.noise_sigma_db = 0.0;
  const auto clean = to_power_trace(walk, quiet, 5);
  double s = 0.0, ss = 0.0;
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    const double e = a.samples[k] - clean.samples[k];
    s += e, ss += e * e;
  }
  const double n = static_cast<double>(a.samples.size());
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::sqrt(ss / n) == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("power CSV round trip") {
  auto p = table_profile("call");
  p.plane_to_angle = 0.6;
  const auto t = to_power_trace(synth_walk(p, 300.0, 1.0, 4), GainModel{}, 4);
  const std::string path = "test_power_roundtrip.csv";
  write_power_csv(path, t);
  const auto r = read_power_csv(path, "call");
  std::remove(path.c_str());
  REQUIRE(r.samples.size() == t.samples.size());
  CHECK(r.dt_ms == doctest::Approx(t.dt_ms));
  CHECK(r.app_id == "call");
  for (std::size_t k = 0; k < t.samples.size(); ++k) REQUIRE(r.samples[k] == t.samples[k]);
}

TEST_CASE("calibration recovers the scale that produced its targets") {
  auto racing = table_profile("racing");
  const double k_true = 9.0;
  CalibrationConfig cfg;
  cfg.hpbw_grid = {7.0};
  cfg.n_traces = 40;
  cfg.horizon_ms = 2000.0;
  GainModel g;
  g.hpbw_deg = 7.0;

  // Targets are the simulated restricted means of the known scale, same seed and ensemble.
  racing.plane_to_angle = k_true;
  const auto sims =
      simulate_fall_times(racing, g, WalkOptions{}, cfg.dt_ms, cfg.n_traces, cfg.horizon_ms, {3.0, 10.0}, cfg.gamma, cfg.seed);
  FallTarget target{"racing", fall_time_row(sims[0], 3.0, cfg.horizon_ms).restricted_mean,
                    fall_time_row(sims[1], 10.0, cfg.horizon_ms).restricted_mean};

  racing.plane_to_angle = 1.0;
  const auto cal = calibrate_channel({racing}, {target}, g, WalkOptions{}, cfg);
  REQUIRE(cal.profiles.size() == 1);
  CHECK(cal.hpbw_deg == 7.0);
  // Grid spacing is a factor of (k_max/k_min)^(1/39) ~ 1.27 before refinement.
  CHECK(cal.profiles[0].plane_to_angle == doctest::Approx(k_true).epsilon(0.1));
  CHECK(cal.profiles[0].residual < 0.05);
  CHECK(cal.profiles[0].constraint.empty());

  std::vector<ApplicationProfile> ps{racing};
  GainModel applied;
  apply_calibration(cal, ps, applied);
  CHECK(ps[0].plane_to_angle == cal.profiles[0].plane_to_angle);
  CHECK(applied.hpbw_deg == 7.0);
}

TEST_CASE("calibration reports unreachable targets") {
  const auto racing = table_profile("racing");
  CalibrationConfig cfg;
  cfg.hpbw_grid = {7.0};
  cfg.n_traces = 20;
  cfg.horizon_ms = 500.0;
  cfg.grid_points = 8;
  cfg.refine_iters = 2;
  // 10 dB before 3 dB cannot be matched by any scale.
  FallTarget target{"racing", 400.0, 1.0};
  CHECK_THROWS_AS(calibrate_channel({racing}, {target}, GainModel{}, WalkOptions{}, cfg), CalibrationError);

  FallTarget only3{"racing", 70.0, std::nullopt};
  CHECK_THROWS_AS(calibrate_channel({racing}, {only3}, GainModel{}, WalkOptions{}, cfg), ValidationError);
}
