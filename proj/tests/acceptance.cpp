// Acceptance checks. Prints one PASS/FAIL line per criterion; exits 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "beamsense/calibration.hpp"
#include "beamsense/classifiers.hpp"
#include "beamsense/config.hpp"
#include "beamsense/features.hpp"
#include "beamsense/pipeline.hpp"
#include "beamsense/rng.hpp"
#include "beamsense/stattest.hpp"
#include "beamsense/tracker.hpp"

using namespace beamsense;
namespace fs = std::filesystem;

namespace {

// Tolerances and counts.
constexpr std::size_t kSeeds = 20;
constexpr std::size_t kSeedsRequired = 18;
constexpr double kAlpha = 0.05;
constexpr double kMwRuntimeS = 10.0;
constexpr double kStageRuntimeS = 120.0;
constexpr double kForestClassAccuracy = 0.75;
constexpr double kRacingMean3dbMs = 70.2421;
constexpr double kRacingFactor = 2.0;
constexpr double kVideoCrossingFraction = 0.05;
constexpr double kFastDropAt2s = 10.0, kFastDropAt6s = 20.0, kVideoDropAt30s = 3.0;
constexpr double kOracleRel = 1e-9;
constexpr std::size_t kTrackerIntervals = 10000;
constexpr std::size_t kSwitchLatency = 5;
constexpr std::size_t kSwitchSeeds = 10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

const ExperimentConfig& config() {
  static const ExperimentConfig c;
  return c;
}

// The default config's calibration, fitted once and shared by the corpus-level checks.
const CalibratedSetup& setup() {
  static const CalibratedSetup s = [] {
    const auto& cfg = config();
    auto cc = cfg.calibration;
    cc.dt_ms = cfg.dt_ms;
    cc.seed = derive_seed(cfg.seed, "calibration");
    const auto cal = calibrate_channel(cfg.profiles, cfg.targets, cfg.channel, cfg.walk, cc);
    return calibrated_setup(cfg, cal);
  }();
  return s;
}

std::vector<LabeledTraces> corpus_for(std::uint64_t master) {
  const auto& cfg = config();
  return synth_corpus(setup().profiles, setup().gain, cfg.walk, cfg.corpus, cfg.dt_ms, derive_seed(master, "corpus"));
}

// ---- 1: Mann-Whitney exactness ----

double exact_p_by_enumeration(std::size_t n, std::size_t m, double u_obs) {
  const std::size_t N = n + m;
  std::uint64_t total = 0, le = 0, ge = 0;
  for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n) continue;
    std::size_t u = 0, ys_below = 0;
    for (std::size_t r = 0; r < N; ++r) {
      if (mask >> r & 1u)
        u += ys_below;
      else
        ++ys_below;
    }
    ++total;
    if (static_cast<double>(u) <= u_obs) ++le;
    if (static_cast<double>(u) >= u_obs) ++ge;
  }
  return std::min(1.0, 2.0 * (static_cast<double>(std::min(le, ge)) / static_cast<double>(total)));
}

double u_by_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  double u = 0.0;
  for (double a : x)
    for (double b : y) u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return u;
}

Outcome mw_exactness() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(1, "acceptance-mw"));
  std::normal_distribution<double> g(0.0, 1.0);
  std::size_t checked = 0, mismatched = 0;
  for (std::size_t n = 1; n <= 7; ++n)
    for (std::size_t m = 1; m <= 7; ++m)
      for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> x(n), y(m);
        for (auto& v : x) v = g(rng) + 0.25 * rep;
        for (auto& v : y) v = g(rng);
        const auto r = mann_whitney_u(x, y);
        ++checked;
        if (r.method != MWMethod::exact || r.u_statistic != u_by_pairs(x, y) ||
            r.p_value != exact_p_by_enumeration(n, m, r.u_statistic))
          ++mismatched;
      }
  struct TieCase {
    std::vector<double> x, y;
    double u;
  };
  const std::vector<TieCase> ties{{{1, 2, 2}, {2, 3, 4}, 1.0},
                                  {{5, 5, 5}, {5, 5}, 3.0},
                                  {{1, 1, 3}, {1, 2}, 3.0},
                                  {{4, 2, 4, 6}, {4, 4, 1}, 8.0},
                                  {{0, 0, 1, 1, 2}, {1, 1, 1, 0}, 10.0}};
  std::size_t tie_ok = 0;
  for (const auto& c : ties) tie_ok += mann_whitney_u(c.x, c.y).u_statistic == c.u;
  const double secs = seconds_since(t0);
  return {mismatched == 0 && tie_ok == ties.size() && secs < kMwRuntimeS,
          std::to_string(checked - mismatched) + "/" + std::to_string(checked) + " exact p equal, " +
              std::to_string(tie_ok) + "/5 tie cases, " + fmt(secs, 3) + " s"};
}

// ---- 2 and 3: slope tests over many master seeds ----

struct SeedRuns {
  std::size_t class_separated = 0;
  std::size_t app_inseparable = 0;
  double seconds = 0.0;
  std::string worst_class_p;
};

const SeedRuns& seed_runs() {
  static const SeedRuns runs = [] {
    const auto& cfg = config();
    setup();
    const auto t0 = Clock::now();
    SeedRuns r;
    const WindowSpec window{50.0, 150.0};
    double worst = 0.0;
    for (std::size_t s = 0; s < kSeeds; ++s) {
      const std::uint64_t master = derive_seed(cfg.seed, "acceptance-run", s);
      const auto apps = corpus_for(master);
      const auto classes = group_by_class(apps, setup().profiles);
      const auto cm = pairwise_slope_matrix(classes, window, 10, derive_seed(master, "mwtest-class"));
      worst = std::max(worst, cm.p[0][1]);
      r.class_separated += cm.p[0][1] < kAlpha;
      const auto am = pairwise_slope_matrix(apps, window, 10, derive_seed(master, "mwtest-app"));
      bool any = false;
      for (std::size_t i = 0; i < am.labels.size(); ++i)
        for (std::size_t j = i + 1; j < am.labels.size(); ++j)
          if (class_for_app(am.labels[i]) == class_for_app(am.labels[j]) && am.p[i][j] >= kAlpha) any = true;
      r.app_inseparable += any;
    }
    r.seconds = seconds_since(t0);
    r.worst_class_p = fmt(worst);
    return r;
  }();
  return runs;
}

Outcome class_separability() {
  const auto& r = seed_runs();
  return {r.class_separated >= kSeedsRequired && r.seconds < kStageRuntimeS,
          "fast-vs-slow p < 0.05 in " + std::to_string(r.class_separated) + "/" + std::to_string(kSeeds) +
              " seeds (largest p " + r.worst_class_p + "), " + fmt(r.seconds, 3) + " s"};
}

Outcome app_non_separability() {
  const auto& r = seed_runs();
  return {r.app_inseparable >= kSeedsRequired,
          "some same-class application pair has p >= 0.05 in " + std::to_string(r.app_inseparable) + "/" +
              std::to_string(kSeeds) + " seeds"};
}

// ---- 4: forest accuracy ----

Outcome forest_accuracy() {
  const auto& cfg = config();
  setup();
  const auto t0 = Clock::now();
  const auto corpus = corpus_for(cfg.seed);
  const auto by_app = feature_dataset(corpus, setup().profiles, cfg.features.window, cfg.features.stft, LabelLevel::app);
  const auto by_class = feature_dataset(corpus, setup().profiles, cfg.features.window, cfg.features.stft, LabelLevel::cls);
  const auto splits = stratified_splits(by_app.labels, kSeeds, 0.5, derive_seed(cfg.seed, "acceptance-split"));
  auto cc = cfg.classify;
  cc.forest_trees = 100;
  const auto rc = run_classification(by_class, splits, cc, derive_seed(cfg.seed, "acceptance-classify"), "class");
  const auto ra = run_classification(by_app, splits, cc, derive_seed(cfg.seed, "acceptance-classify"), "app");
  auto forest = [](const ClassificationReport& r) {
    for (const auto& s : r.scores)
      if (s.classifier == "forest") return s.accuracy.mean;
    throw std::runtime_error("no forest scores");
  };
  const double cls = forest(rc), app = forest(ra);
  const double secs = seconds_since(t0);
  return {cls >= kForestClassAccuracy && secs < kStageRuntimeS,
          std::to_string(by_app.size()) + " traces, class accuracy " + fmt(cls) + ", application accuracy " +
              fmt(app) + ", " + fmt(secs, 3) + " s"};
}

// ---- 5 and 6: fall times and ensemble dynamics ----

struct Dynamics {
  std::map<std::string, EnsembleDynamics> apps;
  double seconds = 0.0;
};

const Dynamics& dynamics() {
  static const Dynamics d = [] {
    const auto& cfg = config();
    setup();
    const auto t0 = Clock::now();
    Dynamics out;
    const auto& dyn = cfg.dynamics;
    for (const auto& p : setup().profiles) {
      const double duration = p.name == "video" ? dyn.video_duration_ms : dyn.duration_ms;
      out.apps.emplace(p.name, simulate_dynamics(p, setup().gain, cfg.walk, cfg.dt_ms, dyn.traces_per_app, duration,
                                                 dyn.grid_step_ms, {3.0, 10.0}, cfg.track.controller.detect_gamma,
                                                 derive_seed(cfg.seed, "acceptance-dynamics")));
    }
    out.seconds = seconds_since(t0);
    return out;
  }();
  return d;
}

Outcome fall_time_structure() {
  const auto& d = dynamics();
  auto row3 = [&](const std::string& app) -> const FallTimeRow& { return *d.apps.at(app).falls.row(3.0); };
  const double racing = row3("racing").restricted_mean, vr = row3("vr").restricted_mean,
               call = row3("call").restricted_mean;
  const auto racing_mean = row3("racing").mean;
  const double video_frac = row3("video").crossing_fraction;
  const bool order = racing < vr && vr < call;
  const bool racing_ok = racing_mean && *racing_mean >= kRacingMean3dbMs / kRacingFactor &&
                         *racing_mean <= kRacingMean3dbMs * kRacingFactor;
  const bool video_ok = video_frac < kVideoCrossingFraction;
  return {order && racing_ok && video_ok && d.seconds < kStageRuntimeS,
          "3 dB restricted means racing " + fmt(racing) + " < vr " + fmt(vr) + " < call " + fmt(call) +
              " ms, racing mean " + (racing_mean ? fmt(*racing_mean) : std::string("n/a")) +
              " ms, video crossing fraction " + fmt(video_frac) + " over 30 s, " + fmt(d.seconds, 3) + " s"};
}

Outcome ensemble_dynamics() {
  const auto& d = dynamics();
  // Equal trace counts per app, so the class ensemble mean is the average of the app means.
  auto fast_drop = [&](double t) {
    return 0.5 * (d.apps.at("vr").mean_drop_at(t) + d.apps.at("racing").mean_drop_at(t));
  };
  const double at2 = fast_drop(2000.0), at6 = fast_drop(6000.0);
  const double video = d.apps.at("video").mean_drop_at(30000.0);
  return {at2 >= kFastDropAt2s && at6 >= kFastDropAt6s && video <= kVideoDropAt30s,
          "fast-class drop " + fmt(at2) + " dB at 2 s, " + fmt(at6) + " dB at 6 s; video drop " + fmt(video) +
              " dB at 30 s"};
}

// ---- 7: feature oracles ----

bool close(double a, double b) { return std::abs(a - b) <= kOracleRel * std::max(1.0, std::abs(b)); }

Outcome feature_oracles() {
  std::size_t bad = 0;
  const std::size_t n_traces = 100;
  const WindowSpec w{0.0, 300.0};
  for (std::size_t s = 0; s < n_traces; ++s) {
    Rng rng(derive_seed(7, "acceptance-features", s));
    std::normal_distribution<double> g(0.0, 1.0);
    PowerTrace tr;
    double level = -14.8;
    for (int k = 0; k <= 300; ++k) tr.samples.push_back((level -= 0.03 * std::abs(g(rng))) + 0.2 * g(rng));
    const auto& x = tr.samples;
    const std::size_t n = x.size();

    long double st = 0, sx = 0, stt = 0, stx = 0, mean = 0;
    for (std::size_t k = 0; k < n; ++k) st += k, sx += x[k], stt += 1.0L * k * k, stx += k * x[k];
    const double slope = static_cast<double>((n * stx - st * sx) / (n * stt - st * st));

    mean = sx / n;
    long double num = 0, den = 0;
    for (std::size_t k = 0; k + 1 < n; ++k) num += (x[k] - mean) * (x[k + 1] - mean);
    for (double v : x) den += (v - mean) * (v - mean);
    const double lag1 = static_cast<double>(num / den);

    const double gamma = 0.01 + 0.0098 * static_cast<double>(s);
    const auto sm = ewma(x, gamma);
    for (std::size_t k = 0; k < n; k += 37) {
      long double acc = std::pow(1.0L - gamma, static_cast<long double>(k)) * x[0];
      for (std::size_t j = 1; j <= k; ++j) acc += gamma * std::pow(1.0L - gamma, static_cast<long double>(k - j)) * x[j];
      bad += !close(sm[k], static_cast<double>(acc));
    }

    const StftParams sp;
    const int W = sp.fft_len, hop = sp.hop, L = W + 1;
    double stft = 0.0;
    for (std::size_t start = 0; start + L <= n; start += hop)
      for (int k = 0; k < L; ++k) {
        std::complex<double> acc = 0.0;
        for (int j = 0; j < L; ++j)
          acc += x[start + j] * 0.5 * (1.0 - std::cos(2.0 * M_PI * j / W)) * std::polar(1.0, -2.0 * M_PI * k * j / L);
        stft += std::abs(acc);
      }

    bad += !close(lsf_slope(tr, w), slope);
    bad += !close(lag1_autocorr(x.data(), n), lag1);
    bad += !close(stft_sum(tr, w, sp), stft);
  }
  return {bad == 0, std::to_string(n_traces) + " traces, " + std::to_string(bad) + " mismatches beyond 1e-9 relative"};
}

// ---- 8: classifier properties ----

Dataset blobs(std::uint64_t seed, std::size_t n, std::size_t dims, double sep, double label_noise) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    std::vector<double> r(dims);
    for (auto& v : r) v = g(rng);
    r[0] += y ? sep : 0.0;
    d.rows.push_back(r);
    d.labels.push_back(uniform01(rng) < label_noise ? 1 - y : y);
  }
  d.class_names = {"a", "b"};
  for (std::size_t f = 0; f < dims; ++f) d.feature_names.push_back("f" + std::to_string(f));
  return d;
}

Outcome classifier_properties() {
  std::vector<std::string> failed;
  const auto noisy = blobs(derive_seed(8, "acceptance-cls"), 200, 5, 1.0, 0.15);

  // Consistent data: no duplicate rows with different labels.
  std::vector<std::size_t> all(noisy.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  TreeParams unlimited;
  unlimited.max_depth = 0;
  const auto tree = train_tree(noisy, all, unlimited, nullptr);
  if (evaluate(predict_all(tree, noisy.rows), noisy.labels, 2).accuracy != 1.0) failed.push_back("full-depth fit");

  ForestParams one;
  one.n_trees = 1;
  one.bootstrap = false;
  one.max_features = noisy.n_features();
  const auto probe = blobs(derive_seed(8, "acceptance-probe"), 500, 5, 1.0, 0.0);
  if (predict_all(train_forest(noisy, one, 3), probe.rows) != predict_all(tree, probe.rows))
    failed.push_back("single-tree forest");

  ForestParams p;
  p.n_trees = 30;
  if (to_json(train_forest(noisy, p, 11)).dump() != to_json(train_forest(noisy, p, 11)).dump())
    failed.push_back("determinism");

  Rng rng(derive_seed(8, "acceptance-importance"));
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset imp_data;
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    imp_data.rows.push_back({g(rng), g(rng), 2.0 * y + g(rng), g(rng), g(rng)});
    imp_data.labels.push_back(y);
  }
  imp_data.class_names = {"a", "b"};
  imp_data.feature_names = {"n0", "n1", "signal", "n3", "n4"};
  ForestParams ip;
  ip.n_trees = 100;
  const auto imp = feature_importance(train_forest(imp_data, ip, 5));
  double sum = 0.0;
  for (double v : imp) sum += v;
  if (std::abs(sum - 1.0) > 1e-9) failed.push_back("importance sum");
  if (std::max_element(imp.begin(), imp.end()) - imp.begin() != 2) failed.push_back("importance ranking");

  const auto m = evaluate({1, 1, 0, 1, 0, 0}, {1, 1, 1, 0, 0, 0}, 2);
  if (m.per_class[1].f1 != 2.0 / 3.0 || m.confusion[1][1] != 2 || m.confusion[1][0] != 1 || m.confusion[0][1] != 1 ||
      m.confusion[0][0] != 2)
    failed.push_back("hand confusion matrix");

  std::string detail = failed.empty() ? "all 6 properties hold" : "failed:";
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty(), detail};
}

// ---- 9: tracker closed loop ----

Outcome tracker_closed_loop() {
  const auto& cfg = config();
  const auto& s = setup();
  const auto t0 = Clock::now();
  TrackerConfig tc = cfg.track.controller;
  tc.dt_ms = cfg.dt_ms;
  PopulationConfig pc = cfg.track.population;
  pc.dt_ms = cfg.dt_ms;
  const auto pop = build_population(s.profiles, s.gain, cfg.walk, tc, pc, derive_seed(cfg.seed, "population"));
  const auto q = pop.class_falls.at("fast").rows.front().quantile(tc.quantile_x, tc.quantile_mode);
  const double fast_bound = q ? std::max(*q, tc.default_interval_ms) : tc.max_interval_ms;

  bool slow_ok = true, fast_ok = true;
  std::ostringstream detail;
  for (const auto& p : s.profiles) {
    const auto r = simulate_tracker(tc, pop, s.profiles, s.gain, cfg.walk, {{0, p.name}}, kTrackerIntervals,
                                    derive_seed(cfg.seed, "acceptance-track:" + p.name));
    if (p.class_label == AppClass::slow) {
      const bool ok = r.final_state.phase == Phase::active && r.final_state.current_interval_ms == tc.max_interval_ms &&
                      r.outages_total == 0;
      slow_ok = slow_ok && ok;
      detail << p.name << " " << to_string(r.final_state.phase) << "@" << fmt(r.final_state.current_interval_ms)
             << " outages " << r.outages_total << "; ";
    } else {
      double largest = 0.0;
      for (double v : r.selected_intervals) largest = std::max(largest, v);
      const bool ok = !r.selected_intervals.empty() && largest <= fast_bound;
      fast_ok = fast_ok && ok;
      detail << p.name << " max interval " << fmt(largest) << " (bound " << fmt(fast_bound) << "); ";
    }
  }

  std::size_t within = 0, worst = 0;
  const auto& t = cfg.track;
  for (std::size_t k = 0; k < kSwitchSeeds; ++k) {
    const auto r = simulate_tracker(tc, pop, s.profiles, s.gain, cfg.walk, {{0, "video"}, {t.switch_at, "racing"}},
                                    t.switch_at + 50, derive_seed(cfg.seed, "acceptance-switch", k));
    const bool active_before = r.events[t.switch_at - 1].phase == Phase::active;
    std::size_t latency = 0;
    for (std::size_t i = t.switch_at; i < r.events.size() && !latency; ++i)
      if (r.events[i].action == Action::reset_to_warmup) latency = i - t.switch_at + 1;
    if (active_before && latency > 0 && latency <= kSwitchLatency) ++within;
    worst = std::max(worst, latency ? latency : r.events.size());
  }
  detail << "slow->fast reset within " << kSwitchLatency << " intervals in " << within << "/" << kSwitchSeeds
         << " runs (worst " << worst << "), " << fmt(seconds_since(t0), 3) << " s";
  return {slow_ok && fast_ok && within == kSwitchSeeds, detail.str()};
}

// ---- 10: pipeline determinism ----

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    out[fs::relative(e.path(), dir).string()] = s.str();
  }
  return out;
}

Outcome pipeline_determinism(const fs::path& work) {
  const auto t0 = Clock::now();
  std::map<std::string, std::string> snaps[2];
  for (int i = 0; i < 2; ++i) {
    PipelineOptions o;
    o.out_dir = work / (i == 0 ? "run_a" : "run_b");
    o.force = true;
    fs::remove_all(o.out_dir);
    run_pipeline(config(), o);
    snaps[i] = snapshot(o.out_dir);
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : snaps[0]) {
    const auto it = snaps[1].find(name);
    differing += it == snaps[1].end() || it->second != bytes;
  }
  differing += snaps[1].size() > snaps[0].size() ? snaps[1].size() - snaps[0].size() : 0;
  return {differing == 0 && !snaps[0].empty(),
          std::to_string(snaps[0].size()) + " files, " + std::to_string(differing) + " differ, " +
              fmt(seconds_since(t0), 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work_dir = "acceptance_work";
  app.add_option("--work-dir", work_dir, "scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work_dir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 Mann-Whitney exactness", mw_exactness},
      {"2 class separability over 50-150 ms", class_separability},
      {"3 individual applications not separable", app_non_separability},
      {"4 forest class accuracy", forest_accuracy},
      {"5 fall-time structure", fall_time_structure},
      {"6 ensemble dynamics", ensemble_dynamics},
      {"7 feature oracle equivalence", feature_oracles},
      {"8 classifier properties", classifier_properties},
      {"9 tracker closed loop", tracker_closed_loop},
      {"10 pipeline determinism", [&] { return pipeline_determinism(work_dir); }},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
