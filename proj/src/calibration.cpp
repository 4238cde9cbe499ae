#include "beamsense/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "beamsense/error.hpp"

namespace beamsense {

std::vector<FallTarget> default_fall_targets() {
  return {
      {"video", std::nullopt, std::nullopt},
      {"call", 198.242, 599.1333},
      {"vr", 175.8177, 316.365},
      {"racing", 70.2421, 96.0087},
  };
}

void validate(const CalibrationConfig& c) {
  BEAMSENSE_REQUIRE(!c.hpbw_grid.empty(), "calibration hpbw grid is empty");
  for (double h : c.hpbw_grid) BEAMSENSE_REQUIRE(h > 0.0, "hpbw grid values must be > 0");
  BEAMSENSE_REQUIRE(c.k_min > 0.0 && c.k_max > c.k_min, "need 0 < k_min < k_max");
  BEAMSENSE_REQUIRE(c.grid_points >= 3, "grid_points must be >= 3");
  BEAMSENSE_REQUIRE(c.refine_iters >= 0, "refine_iters must be >= 0");
  BEAMSENSE_REQUIRE(c.n_traces >= 2, "calibration needs at least 2 traces");
  BEAMSENSE_REQUIRE(c.dt_ms > 0.0 && c.horizon_ms > c.dt_ms, "bad calibration horizon");
  BEAMSENSE_REQUIRE(c.gamma > 0.0 && c.gamma <= 1.0, "gamma must be in (0, 1]");
  BEAMSENSE_REQUIRE(c.residual_bound > 0.0, "residual_bound must be > 0");
  BEAMSENSE_REQUIRE(c.guard_ms > c.dt_ms && c.never_cross_horizon_ms > c.dt_ms, "bad constraint horizons");
  BEAMSENSE_REQUIRE(c.never_cross_max_fraction >= 0.0 && c.never_cross_max_fraction < 1.0,
                    "never_cross_max_fraction must be in [0, 1)");
  BEAMSENSE_REQUIRE(c.never_cross_traces >= 1, "never_cross_traces must be >= 1");
}

const ProfileCalibration* CalibrationResult::find(const std::string& app) const {
  for (const auto& p : profiles)
    if (p.app == app) return &p;
  return nullptr;
}

std::vector<std::vector<std::optional<double>>> simulate_fall_times(const ApplicationProfile& profile,
                                                                    const GainModel& gain, const WalkOptions& walk,
                                                                    double dt_ms, std::size_t n_traces,
                                                                    double horizon_ms,
                                                                    const std::vector<double>& thresholds_db,
                                                                    double gamma, std::uint64_t seed,
                                                                    std::size_t abort_after_crossings) {
  validate(gain);
  const auto n_steps = static_cast<std::size_t>(std::floor(horizon_ms / dt_ms + 1e-9));
  std::vector<std::vector<std::optional<double>>> out(thresholds_db.size());
  std::size_t crossed_first = 0;
  for (std::size_t i = 0; i < n_traces; ++i) {
    Walker w(profile, dt_ms, walk, derive_seed(seed, "cal-walk:" + profile.name, i));
    NoiseStream noise(gain, derive_seed(seed, "cal-noise:" + profile.name, i));
    FallDetector det(thresholds_db, gamma, dt_ms);
    bool done = det.push(noise.power(w.current()));
    for (std::size_t k = 0; k < n_steps && !done; ++k) done = det.push(noise.power(w.step()));
    for (std::size_t j = 0; j < thresholds_db.size(); ++j) out[j].push_back(det.crossings()[j]);
    if (det.crossings()[0]) ++crossed_first;
    if (abort_after_crossings > 0 && crossed_first >= abort_after_crossings) break;
  }
  return out;
}

namespace {

struct Eval {
  double k = 0.0;
  FallTimeRow r3, r10;
  double cost = 0.0;
  int n_targets = 0;
};

struct Fitter {
  const GainModel& gain;
  const WalkOptions& walk;
  const CalibrationConfig& cfg;

  Eval evaluate(ApplicationProfile p, double k, const FallTarget* target) const {
    p.plane_to_angle = k;
    const auto sims = simulate_fall_times(p, gain, walk, cfg.dt_ms, cfg.n_traces, cfg.horizon_ms, {3.0, 10.0},
                                          cfg.gamma, cfg.seed);
    Eval e;
    e.k = k;
    e.r3 = fall_time_row(sims[0], 3.0, cfg.horizon_ms);
    e.r10 = fall_time_row(sims[1], 10.0, cfg.horizon_ms);
    if (target) {
      auto term = [&e](const std::optional<double>& t, double sim) {
        if (!t) return;
        const double l = std::log(std::max(sim, 1e-9) / *t);
        e.cost += l * l;
        ++e.n_targets;
      };
      term(target->mean_3db, e.r3.restricted_mean);
      term(target->mean_10db, e.r10.restricted_mean);
    }
    return e;
  }

  std::vector<double> grid() const {
    std::vector<double> g(cfg.grid_points);
    const double a = std::log(cfg.k_min), b = std::log(cfg.k_max);
    for (int i = 0; i < cfg.grid_points; ++i) g[i] = std::exp(a + (b - a) * i / (cfg.grid_points - 1));
    return g;
  }

  // Grid search on log k, then golden-section refinement around the best node.
  Eval fit(const ApplicationProfile& p, const FallTarget& target) const {
    const auto g = grid();
    std::size_t best = 0;
    std::vector<Eval> evals;
    for (std::size_t i = 0; i < g.size(); ++i) {
      evals.push_back(evaluate(p, g[i], &target));
      if (evals[i].cost < evals[best].cost) best = i;
    }
    double lo = std::log(g[best > 0 ? best - 1 : 0]);
    double hi = std::log(g[std::min(best + 1, g.size() - 1)]);
    Eval champion = evals[best];
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - phi * (hi - lo), d = lo + phi * (hi - lo);
    Eval ec = evaluate(p, std::exp(c), &target), ed = evaluate(p, std::exp(d), &target);
    for (int it = 0; it < cfg.refine_iters; ++it) {
      if (ec.cost < ed.cost) {
        hi = d, d = c, ed = ec;
        c = hi - phi * (hi - lo);
        ec = evaluate(p, std::exp(c), &target);
      } else {
        lo = c, c = d, ec = ed;
        d = lo + phi * (hi - lo);
        ed = evaluate(p, std::exp(d), &target);
      }
    }
    for (const Eval* e : {&ec, &ed})
      if (e->cost < champion.cost) champion = *e;
    return champion;
  }

  bool feasible(ApplicationProfile p, double k, bool guard, bool never_cross) const {
    p.plane_to_angle = k;
    if (guard) {
      const auto s = simulate_fall_times(p, gain, walk, cfg.dt_ms, cfg.n_traces, cfg.guard_ms,
                                         {cfg.outage_threshold_db}, cfg.gamma, cfg.seed, 1);
      for (const auto& c : s[0])
        if (c) return false;
    }
    if (never_cross) {
      const double n_traces = static_cast<double>(cfg.never_cross_traces);
      const auto allowed = static_cast<std::size_t>(std::floor(cfg.never_cross_max_fraction * n_traces + 1e-9));
      const auto s = simulate_fall_times(p, gain, walk, cfg.dt_ms, cfg.never_cross_traces,
                                         cfg.never_cross_horizon_ms,
                                         {cfg.never_cross_threshold_db}, cfg.gamma, cfg.seed, allowed + 1);
      std::size_t n = 0;
      for (const auto& c : s[0]) n += c.has_value();
      if (n > allowed) return false;
    }
    return true;
  }

  // Largest feasible k: top-down grid scan (infeasible runs abort early), then bisection.
  double cap(const ApplicationProfile& p, bool guard, bool never_cross) const {
    const auto g = grid();
    std::size_t i = g.size();
    while (i > 0 && !feasible(p, g[i - 1], guard, never_cross)) --i;
    if (i == 0) throw CalibrationError(p.name + ": constraint infeasible even at k_min");
    if (i == g.size()) return g.back();
    double lo = std::log(g[i - 1]), hi = std::log(g[i]);
    for (int it = 0; it < cfg.refine_iters; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (feasible(p, std::exp(mid), guard, never_cross))
        lo = mid;
      else
        hi = mid;
    }
    return std::exp(lo);
  }
};

const FallTarget* find_target(const std::vector<FallTarget>& targets, const std::string& app) {
  for (const auto& t : targets)
    if (t.app == app && (t.mean_3db || t.mean_10db)) return &t;
  return nullptr;
}

}  // namespace

CalibrationResult calibrate_channel(const std::vector<ApplicationProfile>& profiles,
                                    const std::vector<FallTarget>& targets, const GainModel& gain,
                                    const WalkOptions& walk, const CalibrationConfig& cfg) {
  validate(cfg);
  validate(gain);
  validate(walk);
  BEAMSENSE_REQUIRE(!profiles.empty(), "calibration needs at least one profile");
  for (const auto& p : profiles) validate(p);
  bool has_3 = false, has_10 = false;
  for (const auto& t : targets) has_3 |= t.mean_3db.has_value(), has_10 |= t.mean_10db.has_value();
  BEAMSENSE_REQUIRE(has_3 && has_10, "calibration targets need both the 3 dB and 10 dB rows");

  auto constrained = [&](const ApplicationProfile& p) {
    return p.class_label == AppClass::slow || find_target(targets, p.name) == nullptr;
  };

  // Beamwidth selection uses the unconstrained (fast) profiles only.
  CalibrationResult best;
  std::vector<Eval> best_fits;
  bool have_best = false;
  for (double h : cfg.hpbw_grid) {
    GainModel gm = gain;
    gm.hpbw_deg = h;
    Fitter f{gm, walk, cfg};
    double cost = 0.0;
    std::vector<Eval> fits;
    for (const auto& p : profiles) {
      if (constrained(p)) continue;
      fits.push_back(f.fit(p, *find_target(targets, p.name)));
      cost += fits.back().cost;
    }
    if (!have_best || cost < best.selection_cost) {
      best.hpbw_deg = h;
      best.selection_cost = cost;
      best_fits = fits;
      have_best = true;
    }
  }

  GainModel gm = gain;
  gm.hpbw_deg = best.hpbw_deg;
  Fitter f{gm, walk, cfg};
  std::size_t fit_idx = 0;
  std::ostringstream failures;
  for (const auto& p : profiles) {
    const FallTarget* target = find_target(targets, p.name);
    ProfileCalibration pc;
    pc.app = p.name;
    Eval e;
    if (!constrained(p)) {
      e = best_fits[fit_idx++];
    } else {
      const bool guard = p.class_label == AppClass::slow;
      const bool never = target == nullptr;
      pc.constraint = never ? "never_cross" : "outage_guard";
      const double k_cap = f.cap(p, guard, never);
      if (target) {
        Eval free_fit = f.fit(p, *target);
        if (free_fit.k <= k_cap) {
          e = free_fit;
        } else {
          e = f.evaluate(p, k_cap, target);
          pc.constraint_binding = true;
        }
      } else {
        e = f.evaluate(p, k_cap, nullptr);
        pc.constraint_binding = true;
      }
    }
    pc.plane_to_angle = e.k;
    pc.restricted_mean_3db = e.r3.restricted_mean;
    pc.restricted_mean_10db = e.r10.restricted_mean;
    pc.crossing_fraction_3db = e.r3.crossing_fraction;
    pc.crossing_fraction_10db = e.r10.crossing_fraction;
    pc.residual = e.n_targets ? std::sqrt(e.cost / e.n_targets) : 0.0;
    if (!pc.constraint_binding && pc.residual > cfg.residual_bound)
      failures << ' ' << p.name << " (residual " << pc.residual << ')';
    best.profiles.push_back(pc);
  }
  if (!failures.str().empty())
    throw CalibrationError("calibration residual above bound " + std::to_string(cfg.residual_bound) + ":" +
                           failures.str());
  return best;
}

void apply_calibration(const CalibrationResult& cal, std::vector<ApplicationProfile>& profiles, GainModel& gain) {
  gain.hpbw_deg = cal.hpbw_deg;
  for (auto& p : profiles) {
    const auto* pc = cal.find(p.name);
    BEAMSENSE_REQUIRE(pc != nullptr, "calibration has no entry for profile " + p.name);
    p.plane_to_angle = pc->plane_to_angle;
  }
}

}  // namespace beamsense
