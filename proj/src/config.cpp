#include "beamsense/config.hpp"

#include <fstream>
#include <set>

#include "beamsense/error.hpp"

namespace beamsense {

using oj = nlohmann::ordered_json;
using nlohmann::json;

namespace {

oj curve_json(const Curve& c) {
  oj a = oj::array();
  for (const auto& [d, v] : c.knots) a.push_back({d, v});
  return a;
}

oj window_json(const WindowSpec& w) { return oj::array({w.start_ms, w.end_ms}); }

const char* taper_name(TaperWindow t) { return t == TaperWindow::hann ? "hann" : "rectangular"; }

// Reads keys from one JSON object, remembering which were used so leftovers
// can be reported as unknown.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: '" + path_ + "' must be an object");
  }
  ~Obj() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ValidationError("config: unknown key '" + path_ + "." + it.key() + "'");
  }
  template <class T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config: bad value for '" + path_ + "." + key + "': " + e.what());
    }
  }
  const json* sub(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const char* key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

Curve curve_from(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ValidationError("config: '" + path + "' must be a non-empty array of [d, v]");
  Curve c;
  for (const auto& k : j) {
    if (!k.is_array() || k.size() != 2) throw ValidationError("config: '" + path + "' knots must be [d, v] pairs");
    c.knots.push_back({k[0].get<double>(), k[1].get<double>()});
  }
  return c;
}

WindowSpec window_from(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw ValidationError("config: '" + path + "' must be [start_ms, end_ms]");
  return {j[0].get<double>(), j[1].get<double>()};
}

std::vector<WindowSpec> windows_from(const json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError("config: '" + path + "' must be an array of windows");
  std::vector<WindowSpec> out;
  for (const auto& w : j) out.push_back(window_from(w, path));
  return out;
}

template <class E>
E enum_from(const std::string& s, const std::vector<std::pair<const char*, E>>& table, const std::string& path) {
  for (const auto& [name, v] : table)
    if (s == name) return v;
  throw ValidationError("config: bad value '" + s + "' for '" + path + "'");
}

}  // namespace

void validate(const ExperimentConfig& c) {
  BEAMSENSE_REQUIRE(c.dt_ms > 0.0, "dt_ms must be > 0");
  BEAMSENSE_REQUIRE(!c.profiles.empty(), "no profiles configured");
  std::set<std::string> names;
  for (const auto& p : c.profiles) {
    validate(p);
    BEAMSENSE_REQUIRE(names.insert(p.name).second, "duplicate profile '" + p.name + "'");
  }
  validate(c.walk);
  validate(c.channel);
  validate(c.calibration);
  BEAMSENSE_REQUIRE(c.corpus.traces_per_app >= 2, "corpus needs at least 2 traces per app");
  BEAMSENSE_REQUIRE(c.corpus.duration_ms >= c.features.window.end_ms, "corpus traces must cover the feature window");
  BEAMSENSE_REQUIRE(c.dynamics.traces_per_app >= 1, "dynamics ensemble needs at least 1 trace");
  BEAMSENSE_REQUIRE(c.dynamics.duration_ms > c.dt_ms && c.dynamics.video_duration_ms > c.dt_ms, "bad dynamics duration");
  BEAMSENSE_REQUIRE(c.dynamics.grid_step_ms > 0.0, "grid_step_ms must be > 0");
  BEAMSENSE_REQUIRE(!c.dynamics.thresholds_db.empty(), "no fall-time thresholds");
  validate(c.features.window);
  for (const auto& w : c.features.pca_windows) {
    validate(w);
    BEAMSENSE_REQUIRE(w.end_ms <= c.corpus.duration_ms, "PCA window beyond corpus duration");
  }
  for (double e : c.features.slope_window_ends)
    BEAMSENSE_REQUIRE(e > 0.0 && e <= c.corpus.duration_ms, "slope window end outside corpus duration");
  for (const auto& w : c.mwtest.windows) {
    validate(w);
    BEAMSENSE_REQUIRE(w.end_ms <= c.corpus.duration_ms, "Mann-Whitney window beyond corpus duration");
  }
  for (auto n : c.mwtest.n_series)
    BEAMSENSE_REQUIRE(n >= 2 && n <= c.corpus.traces_per_app, "n_series must be in [2, corpus traces_per_app]");
  BEAMSENSE_REQUIRE(c.classify.repetitions >= 1, "classify repetitions must be >= 1");
  BEAMSENSE_REQUIRE(c.classify.train_fraction > 0.0 && c.classify.train_fraction < 1.0, "train_fraction must be in (0, 1)");
  BEAMSENSE_REQUIRE(c.classify.tree_depth >= 1, "tree_depth must be >= 1");
  BEAMSENSE_REQUIRE(c.classify.forest_trees >= 1, "forest_trees must be >= 1");
  BEAMSENSE_REQUIRE(c.classify.knn_k >= 1 && c.classify.knn_k % 2 == 1, "knn_k must be odd");
  validate(c.track.controller);
  BEAMSENSE_REQUIRE(names.count(c.track.switch_from) && names.count(c.track.switch_to), "switch apps must be profiles");
  BEAMSENSE_REQUIRE(c.track.switch_at < c.track.switch_intervals, "switch_at must be < switch_intervals");
}

oj to_json(const ExperimentConfig& c) {
  oj j;
  j["seed"] = c.seed;
  j["dt_ms"] = c.dt_ms;
  oj profiles = oj::array();
  for (const auto& p : c.profiles) {
    oj jp;
    jp["name"] = p.name;
    jp["class"] = std::string(to_string(p.class_label));
    jp["speed"] = curve_json(p.speed);
    jp["drift"] = curve_json(p.drift);
    jp["axis_corr"] = p.axis_corr;
    jp["x_speed"] = curve_json(p.x_speed);
    jp["y_speed"] = curve_json(p.y_speed);
    jp["x_drift"] = curve_json(p.x_drift);
    jp["y_drift"] = curve_json(p.y_drift);
    jp["plane_to_angle"] = p.plane_to_angle;
    profiles.push_back(jp);
  }
  j["profiles"] = profiles;
  j["walk"] = {{"fov_half_deg", c.walk.fov_half_deg},
               {"redraw_ms", c.walk.redraw_ms},
               {"geometry_spread", c.walk.geometry_spread},
               {"restart_flat_ms", c.walk.restart_flat_ms}};
  j["channel"] = {{"hpbw_deg", c.channel.hpbw_deg},
                  {"loss_floor_db", c.channel.loss_floor_db},
                  {"p0_db", c.channel.p0_db},
                  {"noise_sigma_db", c.channel.noise_sigma_db}};
  j["calibrate"] = c.calibrate;
  const auto& k = c.calibration;
  j["calibration"] = {{"hpbw_grid", k.hpbw_grid},
                      {"k_min", k.k_min},
                      {"k_max", k.k_max},
                      {"grid_points", k.grid_points},
                      {"refine_iters", k.refine_iters},
                      {"n_traces", k.n_traces},
                      {"horizon_ms", k.horizon_ms},
                      {"gamma", k.gamma},
                      {"residual_bound", k.residual_bound},
                      {"outage_threshold_db", k.outage_threshold_db},
                      {"guard_ms", k.guard_ms},
                      {"never_cross_threshold_db", k.never_cross_threshold_db},
                      {"never_cross_horizon_ms", k.never_cross_horizon_ms},
                      {"never_cross_max_fraction", k.never_cross_max_fraction},
                      {"never_cross_traces", k.never_cross_traces}};
  oj targets = oj::array();
  for (const auto& t : c.targets) {
    oj jt;
    jt["app"] = t.app;
    jt["mean_3db"] = t.mean_3db ? oj(*t.mean_3db) : oj(nullptr);
    jt["mean_10db"] = t.mean_10db ? oj(*t.mean_10db) : oj(nullptr);
    targets.push_back(jt);
  }
  j["targets"] = targets;
  j["corpus"] = {{"traces_per_app", c.corpus.traces_per_app}, {"duration_ms", c.corpus.duration_ms}};
  j["dynamics"] = {{"traces_per_app", c.dynamics.traces_per_app},
                   {"duration_ms", c.dynamics.duration_ms},
                   {"video_duration_ms", c.dynamics.video_duration_ms},
                   {"grid_step_ms", c.dynamics.grid_step_ms},
                   {"thresholds_db", c.dynamics.thresholds_db}};
  oj pw = oj::array();
  for (const auto& w : c.features.pca_windows) pw.push_back(window_json(w));
  j["features"] = {{"window", window_json(c.features.window)},
                   {"stft", {{"fft_len", c.features.stft.fft_len},
                             {"hop", c.features.stft.hop},
                             {"taper", taper_name(c.features.stft.taper)}}},
                   {"pca_windows", pw},
                   {"slope_window_ends", c.features.slope_window_ends}};
  oj mw = oj::array();
  for (const auto& w : c.mwtest.windows) mw.push_back(window_json(w));
  j["mwtest"] = {{"windows", mw}, {"n_series", c.mwtest.n_series}};
  j["classify"] = {{"repetitions", c.classify.repetitions},
                   {"train_fraction", c.classify.train_fraction},
                   {"tree_depth", c.classify.tree_depth},
                   {"forest_trees", c.classify.forest_trees},
                   {"forest_aggregation", c.classify.forest_aggregation == Aggregation::median ? "median" : "majority"},
                   {"knn_k", c.classify.knn_k}};
  const auto& t = c.track.controller;
  j["track"] = {
      {"default_interval_ms", t.default_interval_ms},
      {"max_interval_ms", t.max_interval_ms},
      {"warmup_n", t.warmup_n},
      {"quantile_x", t.quantile_x},
      {"quantile_mode", t.quantile_mode == QuantileMode::survival ? "survival" : "cdf"},
      {"outage_threshold_db", t.outage_threshold_db},
      {"detector", std::string(to_string(t.detector))},
      {"alpha", t.alpha},
      {"recheck_window", t.recheck_window},
      {"recheck_alpha", t.recheck_alpha},
      {"classifier_min_fraction", t.classifier_min_fraction},
      {"discard_first_interval", t.discard_first_interval},
      {"detect_gamma", t.detect_gamma},
      {"population_traces_per_app", c.track.population.traces_per_app},
      {"population_duration_ms", c.track.population.duration_ms},
      {"population_forest_trees", c.track.population.forest_trees},
      {"intervals_per_app", c.track.intervals_per_app},
      {"switch_from", c.track.switch_from},
      {"switch_to", c.track.switch_to},
      {"switch_at", c.track.switch_at},
      {"switch_intervals", c.track.switch_intervals},
  };
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  {
    Obj o(j, "config");
    o.get("seed", c.seed);
    o.get("dt_ms", c.dt_ms);
    if (const json* ps = o.sub("profiles")) {
      if (!ps->is_array()) throw ValidationError("config: 'profiles' must be an array");
      c.profiles.clear();
      for (const auto& jp : *ps) {
        Obj po(jp, "profiles[]");
        std::string name;
        po.get("name", name);
        ApplicationProfile p;
        if (name == "video" || name == "call" || name == "vr" || name == "racing") {
          p = table_profile(name);
        } else {
          p.name = name;
          p.speed = p.drift = p.x_speed = p.y_speed = p.x_drift = p.y_drift = Curve::constant(0.0);
        }
        std::string cls = std::string(to_string(p.class_label));
        po.get("class", cls);
        p.class_label = enum_from<AppClass>(cls, {{"slow", AppClass::slow}, {"fast", AppClass::fast}}, "profiles[].class");
        for (auto [key, curve] : {std::pair{"speed", &p.speed}, {"drift", &p.drift}, {"x_speed", &p.x_speed},
                                  {"y_speed", &p.y_speed}, {"x_drift", &p.x_drift}, {"y_drift", &p.y_drift}})
          if (const json* jc = po.sub(key)) *curve = curve_from(*jc, po.path(key));
        po.get("axis_corr", p.axis_corr);
        po.get("plane_to_angle", p.plane_to_angle);
        c.profiles.push_back(std::move(p));
      }
    }
    if (const json* w = o.sub("walk")) {
      Obj wo(*w, "walk");
      wo.get("fov_half_deg", c.walk.fov_half_deg);
      wo.get("redraw_ms", c.walk.redraw_ms);
      wo.get("geometry_spread", c.walk.geometry_spread);
      wo.get("restart_flat_ms", c.walk.restart_flat_ms);
    }
    if (const json* ch = o.sub("channel")) {
      Obj co(*ch, "channel");
      co.get("hpbw_deg", c.channel.hpbw_deg);
      co.get("loss_floor_db", c.channel.loss_floor_db);
      co.get("p0_db", c.channel.p0_db);
      co.get("noise_sigma_db", c.channel.noise_sigma_db);
    }
    o.get("calibrate", c.calibrate);
    if (const json* k = o.sub("calibration")) {
      Obj ko(*k, "calibration");
      auto& K = c.calibration;
      ko.get("hpbw_grid", K.hpbw_grid);
      ko.get("k_min", K.k_min);
      ko.get("k_max", K.k_max);
      ko.get("grid_points", K.grid_points);
      ko.get("refine_iters", K.refine_iters);
      ko.get("n_traces", K.n_traces);
      ko.get("horizon_ms", K.horizon_ms);
      ko.get("gamma", K.gamma);
      ko.get("residual_bound", K.residual_bound);
      ko.get("outage_threshold_db", K.outage_threshold_db);
      ko.get("guard_ms", K.guard_ms);
      ko.get("never_cross_threshold_db", K.never_cross_threshold_db);
      ko.get("never_cross_horizon_ms", K.never_cross_horizon_ms);
      ko.get("never_cross_max_fraction", K.never_cross_max_fraction);
      ko.get("never_cross_traces", K.never_cross_traces);
    }
    if (const json* ts = o.sub("targets")) {
      if (!ts->is_array()) throw ValidationError("config: 'targets' must be an array");
      c.targets.clear();
      for (const auto& jt : *ts) {
        Obj to(jt, "targets[]");
        FallTarget t;
        to.get("app", t.app);
        for (auto [key, field] : {std::pair{"mean_3db", &t.mean_3db}, {"mean_10db", &t.mean_10db}})
          if (const json* v = to.sub(key); v && !v->is_null()) *field = v->get<double>();
        c.targets.push_back(std::move(t));
      }
    }
    if (const json* s = o.sub("corpus")) {
      Obj so(*s, "corpus");
      so.get("traces_per_app", c.corpus.traces_per_app);
      so.get("duration_ms", c.corpus.duration_ms);
    }
    if (const json* s = o.sub("dynamics")) {
      Obj so(*s, "dynamics");
      so.get("traces_per_app", c.dynamics.traces_per_app);
      so.get("duration_ms", c.dynamics.duration_ms);
      so.get("video_duration_ms", c.dynamics.video_duration_ms);
      so.get("grid_step_ms", c.dynamics.grid_step_ms);
      so.get("thresholds_db", c.dynamics.thresholds_db);
    }
    if (const json* s = o.sub("features")) {
      Obj so(*s, "features");
      if (const json* w = so.sub("window")) c.features.window = window_from(*w, "features.window");
      if (const json* st = so.sub("stft")) {
        Obj sto(*st, "features.stft");
        sto.get("fft_len", c.features.stft.fft_len);
        sto.get("hop", c.features.stft.hop);
        std::string taper = taper_name(c.features.stft.taper);
        sto.get("taper", taper);
        c.features.stft.taper = enum_from<TaperWindow>(
            taper, {{"hann", TaperWindow::hann}, {"rectangular", TaperWindow::rectangular}}, "features.stft.taper");
      }
      if (const json* w = so.sub("pca_windows")) c.features.pca_windows = windows_from(*w, "features.pca_windows");
      so.get("slope_window_ends", c.features.slope_window_ends);
    }
    if (const json* s = o.sub("mwtest")) {
      Obj so(*s, "mwtest");
      if (const json* w = so.sub("windows")) c.mwtest.windows = windows_from(*w, "mwtest.windows");
      so.get("n_series", c.mwtest.n_series);
    }
    if (const json* s = o.sub("classify")) {
      Obj so(*s, "classify");
      so.get("repetitions", c.classify.repetitions);
      so.get("train_fraction", c.classify.train_fraction);
      so.get("tree_depth", c.classify.tree_depth);
      so.get("forest_trees", c.classify.forest_trees);
      std::string agg = c.classify.forest_aggregation == Aggregation::median ? "median" : "majority";
      so.get("forest_aggregation", agg);
      c.classify.forest_aggregation = enum_from<Aggregation>(
          agg, {{"majority", Aggregation::majority}, {"median", Aggregation::median}}, "classify.forest_aggregation");
      so.get("knn_k", c.classify.knn_k);
    }
    if (const json* s = o.sub("track")) {
      Obj so(*s, "track");
      auto& t = c.track.controller;
      so.get("default_interval_ms", t.default_interval_ms);
      so.get("max_interval_ms", t.max_interval_ms);
      so.get("warmup_n", t.warmup_n);
      so.get("quantile_x", t.quantile_x);
      std::string qm = t.quantile_mode == QuantileMode::survival ? "survival" : "cdf";
      so.get("quantile_mode", qm);
      t.quantile_mode = enum_from<QuantileMode>(qm, {{"survival", QuantileMode::survival}, {"cdf", QuantileMode::cdf}},
                                                "track.quantile_mode");
      so.get("outage_threshold_db", t.outage_threshold_db);
      std::string det(to_string(t.detector));
      so.get("detector", det);
      t.detector = enum_from<DetectorKind>(
          det, {{"mann-whitney", DetectorKind::mann_whitney}, {"classifier", DetectorKind::classifier}}, "track.detector");
      so.get("alpha", t.alpha);
      so.get("recheck_window", t.recheck_window);
      so.get("recheck_alpha", t.recheck_alpha);
      so.get("classifier_min_fraction", t.classifier_min_fraction);
      so.get("discard_first_interval", t.discard_first_interval);
      so.get("detect_gamma", t.detect_gamma);
      so.get("population_traces_per_app", c.track.population.traces_per_app);
      so.get("population_duration_ms", c.track.population.duration_ms);
      so.get("population_forest_trees", c.track.population.forest_trees);
      so.get("intervals_per_app", c.track.intervals_per_app);
      so.get("switch_from", c.track.switch_from);
      so.get("switch_to", c.track.switch_to);
      so.get("switch_at", c.track.switch_at);
      so.get("switch_intervals", c.track.switch_intervals);
    }
  }
  c.calibration.dt_ms = c.dt_ms;
  c.track.controller.dt_ms = c.dt_ms;
  c.track.population.dt_ms = c.dt_ms;
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace beamsense
