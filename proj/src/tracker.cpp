#include "beamsense/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "beamsense/error.hpp"
#include "beamsense/stattest.hpp"
#include "json.hpp"

namespace beamsense {

std::string_view to_string(Phase p) { return p == Phase::active ? "active" : "warmup"; }

std::string_view to_string(Action a) {
  switch (a) {
    case Action::maintain: return "maintain";
    case Action::increase: return "increase";
    case Action::realign_now: return "realign-now";
    case Action::reset_to_warmup: return "reset-to-warmup";
  }
  return "?";
}

std::string_view to_string(DetectorKind d) { return d == DetectorKind::classifier ? "classifier" : "mann-whitney"; }

void validate(const TrackerConfig& c) {
  BEAMSENSE_REQUIRE(c.default_interval_ms > 0.0 && c.default_interval_ms <= c.max_interval_ms,
                    "need 0 < default_interval <= max_interval");
  BEAMSENSE_REQUIRE(c.warmup_n >= 2, "warmup_n must be >= 2");
  BEAMSENSE_REQUIRE(c.quantile_x > 0.5 && c.quantile_x < 1.0, "quantile_x must be in (0.5, 1)");
  BEAMSENSE_REQUIRE(c.outage_threshold_db > 0.0, "outage threshold must be > 0 dB");
  BEAMSENSE_REQUIRE(c.alpha > 0.0 && c.alpha < 1.0, "alpha must be in (0, 1)");
  BEAMSENSE_REQUIRE(c.recheck_window >= 2, "recheck_window must be >= 2");
  BEAMSENSE_REQUIRE(c.recheck_alpha > 0.0 && c.recheck_alpha < 1.0, "recheck_alpha must be in (0, 1)");
  BEAMSENSE_REQUIRE(c.classifier_min_fraction > 0.5 && c.classifier_min_fraction <= 1.0,
                    "classifier_min_fraction must be in (0.5, 1]");
  BEAMSENSE_REQUIRE(c.detect_gamma > 0.0 && c.detect_gamma <= 1.0, "detect_gamma must be in (0, 1]");
  BEAMSENSE_REQUIRE(c.dt_ms > 0.0 && c.dt_ms < c.default_interval_ms, "dt must be in (0, default_interval)");
}

TrackerState initial_state(const TrackerConfig& c) {
  TrackerState s;
  s.current_interval_ms = c.default_interval_ms;
  s.discard_next = c.discard_first_interval;
  return s;
}

IntervalRecord summarize_interval(const PowerTrace& segment, const TrackerConfig& cfg) {
  const auto r = window_range(segment, {0.0, cfg.default_interval_ms}, 3);
  const double* x = segment.samples.data() + r.first;
  const std::size_t n = r.size();
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = segment.time_at(r.first + i);
  IntervalRecord rec;
  rec.slope = lsf_slope(t.data(), x, n);
  double m = 0.0, v = 0.0;
  for (std::size_t i = 0; i < n; ++i) m += x[i];
  m /= n;
  for (std::size_t i = 0; i < n; ++i) v += (x[i] - m) * (x[i] - m);
  v /= n;
  rec.short_features = {rec.slope, m, v, lag1_autocorr(x, n)};
  return rec;
}

namespace {

std::vector<PowerTrace> simulate_traces(const ApplicationProfile& p, const GainModel& gain, const WalkOptions& walk,
                                        std::size_t n, double duration_ms, double dt_ms, std::uint64_t seed,
                                        std::string_view tag) {
  std::vector<PowerTrace> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto beam = synth_walk(p, duration_ms, dt_ms, derive_seed(seed, std::string(tag) + "-walk:" + p.name, i), walk);
    out.push_back(to_power_trace(beam, gain, derive_seed(seed, std::string(tag) + "-noise:" + p.name, i)));
  }
  return out;
}

}  // namespace

Population build_population(const std::vector<ApplicationProfile>& profiles, const GainModel& gain,
                            const WalkOptions& walk, const TrackerConfig& tcfg, const PopulationConfig& pcfg,
                            std::uint64_t seed) {
  validate(tcfg);
  BEAMSENSE_REQUIRE(pcfg.traces_per_app >= 2, "population needs at least 2 traces per app");
  BEAMSENSE_REQUIRE(pcfg.duration_ms > tcfg.max_interval_ms, "population traces must outlast max_interval");
  Population pop;
  std::map<std::string, std::vector<std::optional<double>>> per_class;
  Dataset ds;
  for (std::size_t a = 0; a < profiles.size(); ++a) {
    const auto& p = profiles[a];
    pop.apps.push_back(p.name);
    ds.class_names.push_back(p.name);
    std::vector<std::optional<double>> falls;
    for (const auto& tr : simulate_traces(p, gain, walk, pcfg.traces_per_app, pcfg.duration_ms, pcfg.dt_ms, seed, "pop")) {
      const auto rec = summarize_interval(tr, tcfg);
      pop.slopes[p.name].push_back(rec.slope);
      pop.short_features[p.name].push_back(rec.short_features);
      ds.rows.push_back(rec.short_features);
      ds.labels.push_back(static_cast<int>(a));
      falls.push_back(time_to_fall(tr, tcfg.outage_threshold_db, tcfg.detect_gamma));
    }
    auto& cls = per_class[std::string(to_string(p.class_label))];
    cls.insert(cls.end(), falls.begin(), falls.end());
    pop.app_falls[p.name] = {p.name, {fall_time_row(falls, tcfg.outage_threshold_db, pcfg.duration_ms)}};
  }
  for (auto& [label, falls] : per_class)
    pop.class_falls[label] = {label, {fall_time_row(falls, tcfg.outage_threshold_db, pcfg.duration_ms)}};
  if (tcfg.detector == DetectorKind::classifier) {
    ForestParams fp;
    fp.n_trees = pcfg.forest_trees;
    pop.classifier = train_forest(ds, fp, derive_seed(seed, "pop-forest"));
  }
  return pop;
}

double estimate_interval(const FallTimeSummary& summary, const TrackerConfig& cfg) {
  const FallTimeRow* row = summary.row(cfg.outage_threshold_db);
  BEAMSENSE_REQUIRE(row != nullptr, "fall-time summary '" + summary.label + "' has no outage-threshold row");
  BEAMSENSE_REQUIRE(row->n_traces > 0, "fall-time summary '" + summary.label + "' is empty");
  if (row->crossing_fraction < 1.0 - cfg.quantile_x) return cfg.max_interval_ms;
  const auto q = row->quantile(cfg.quantile_x, cfg.quantile_mode);
  if (!q) return cfg.max_interval_ms;
  return std::clamp(*q, cfg.default_interval_ms, cfg.max_interval_ms);
}

double estimate_interval(const Population& pop, const std::string& app_or_class, const TrackerConfig& cfg) {
  if (auto it = pop.class_falls.find(app_or_class); it != pop.class_falls.end()) return estimate_interval(it->second, cfg);
  if (auto it = pop.app_falls.find(app_or_class); it != pop.app_falls.end()) return estimate_interval(it->second, cfg);
  throw ValidationError("no fall-time summary for '" + app_or_class + "'");
}

std::optional<Detection> detect(const std::vector<IntervalRecord>& records, const TrackerConfig& cfg,
                                const Population& pop) {
  BEAMSENSE_REQUIRE(!records.empty(), "nothing to detect on");
  if (cfg.detector == DetectorKind::mann_whitney) {
    std::vector<double> s;
    for (const auto& r : records) s.push_back(r.slope);
    // Best-matching app wins, provided every app of the other class is rejected.
    std::string best;
    double best_p = -1.0;
    std::map<std::string, double> p;
    for (const auto& app : pop.apps) {
      p[app] = mann_whitney_u(s, pop.slopes.at(app)).p_value;
      if (p[app] > best_p) best_p = p[app], best = app;
    }
    if (best_p < cfg.alpha) return std::nullopt;
    const AppClass cls = class_for_app(best);
    for (const auto& app : pop.apps)
      if (class_for_app(app) != cls && p[app] >= cfg.alpha) return std::nullopt;
    return Detection{cls, best, best_p};
  }
  BEAMSENSE_REQUIRE(pop.classifier.has_value(), "classifier detector needs a trained population forest");
  std::map<std::string, std::size_t> app_votes;
  std::size_t fast = 0;
  for (const auto& r : records) {
    const auto& app = pop.apps.at(static_cast<std::size_t>(predict(*pop.classifier, r.short_features)));
    ++app_votes[app];
    fast += class_for_app(app) == AppClass::fast;
  }
  const double n = static_cast<double>(records.size());
  const AppClass cls = fast * 2 > records.size() ? AppClass::fast : AppClass::slow;
  const double frac = (cls == AppClass::fast ? fast : records.size() - fast) / n;
  if (frac < cfg.classifier_min_fraction) return std::nullopt;
  std::string best;
  std::size_t best_n = 0;
  for (const auto& app : pop.apps)  // declaration order breaks ties
    if (class_for_app(app) == cls && app_votes[app] > best_n) best_n = app_votes[app], best = app;
  return Detection{cls, best, frac};
}

StepResult step(const TrackerState& state, const TrackerConfig& cfg, const Population& pop,
                const PowerTrace& measurement) {
  validate(cfg);
  BEAMSENSE_REQUIRE(measurement.dt_ms > 0.0, "measurement dt must be > 0");
  BEAMSENSE_REQUIRE(measurement.duration_ms() + 1e-9 >= state.current_interval_ms,
                    "measurement is shorter than the current interval");
  StepResult out;
  out.state = state;
  TrackerState& s = out.state;
  const auto fall = time_to_fall(measurement, cfg.outage_threshold_db, cfg.detect_gamma);
  out.outage = fall && *fall <= state.current_interval_ms;

  auto reset = [&] {
    s = initial_state(cfg);
    out.action = Action::reset_to_warmup;
  };

  if (s.phase == Phase::warmup) {
    out.action = out.outage ? Action::realign_now : Action::maintain;
    if (s.discard_next) {
      s.discard_next = false;
      return out;
    }
    IntervalRecord rec = summarize_interval(measurement, cfg);
    rec.outage = out.outage;
    s.collected.push_back(std::move(rec));
    if (s.collected.size() > cfg.warmup_n) s.collected.erase(s.collected.begin());
    if (s.collected.size() < cfg.warmup_n) return out;
    auto d = detect(s.collected, cfg, pop);
    if (!d) return out;  // slide the window and keep collecting
    out.score = d->confidence;
    s.phase = Phase::active;
    s.current_interval_ms = estimate_interval(pop, std::string(to_string(d->cls)), cfg);
    s.detected = std::move(d);
    s.active_slopes.clear();
    out.action = Action::increase;
    return out;
  }

  if (out.outage) {
    reset();
    return out;
  }
  s.active_slopes.push_back(summarize_interval(measurement, cfg).slope);
  if (s.active_slopes.size() > cfg.recheck_window) s.active_slopes.erase(s.active_slopes.begin());
  out.action = Action::maintain;
  if (s.active_slopes.size() == cfg.recheck_window) {
    const double p = mann_whitney_u(s.active_slopes, pop.slopes.at(s.detected->app)).p_value;
    out.score = p;
    if (p < cfg.recheck_alpha) reset();
  }
  return out;
}

SimResult simulate_tracker(const TrackerConfig& cfg, const Population& pop,
                           const std::vector<ApplicationProfile>& profiles, const GainModel& gain,
                           const WalkOptions& walk, const std::vector<AppSwitch>& schedule, std::size_t n_intervals,
                           std::uint64_t seed) {
  validate(cfg);
  BEAMSENSE_REQUIRE(!schedule.empty() && schedule.front().at_interval == 0, "schedule must start at interval 0");
  auto profile_for = [&](const std::string& app) -> const ApplicationProfile& {
    for (const auto& p : profiles)
      if (p.name == app) return p;
    throw ValidationError("no profile for application '" + app + "'");
  };
  SimResult res;
  TrackerState state = initial_state(cfg);
  double t = 0.0;
  std::size_t sched = 0;
  const double dt = cfg.dt_ms;
  for (std::size_t i = 0; i < n_intervals; ++i) {
    while (sched + 1 < schedule.size() && schedule[sched + 1].at_interval <= i) ++sched;
    const auto& prof = profile_for(schedule[sched].app);
    const auto beam = synth_walk(prof, state.current_interval_ms, dt, derive_seed(seed, "track-walk", i), walk);
    const auto meas = to_power_trace(beam, gain, derive_seed(seed, "track-noise", i));
    const bool was_active = state.phase == Phase::active;
    auto r = step(state, cfg, pop, meas);
    if (r.outage) {
      ++res.outages_total;
      if (was_active) ++res.outages_active;
    }
    if (r.action == Action::increase) res.selected_intervals.push_back(r.state.current_interval_ms);
    SimEvent e;
    e.t_ms = t;
    e.app = prof.name;
    e.phase = r.state.phase;
    e.interval_ms = r.state.current_interval_ms;
    e.action = r.action;
    e.detected_label = r.state.detected ? std::string(to_string(r.state.detected->cls)) : std::string();
    e.score = r.score;
    e.outage = r.outage;
    res.events.push_back(std::move(e));
    t += state.current_interval_ms;
    state = std::move(r.state);
  }
  res.final_state = state;
  return res;
}

void write_tracking_jsonl(const std::string& path, const std::vector<SimEvent>& events) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    j["t_ms"] = e.t_ms;
    j["phase"] = to_string(e.phase);
    j["interval_ms"] = e.interval_ms;
    j["action"] = to_string(e.action);
    j["detected_label"] = e.detected_label.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(e.detected_label);
    j["p_value_or_confidence"] = e.score ? nlohmann::ordered_json(*e.score) : nlohmann::ordered_json(nullptr);
    f << j.dump() << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace beamsense
