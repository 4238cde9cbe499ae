#pragma once
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "beamsense/channel.hpp"
#include "beamsense/classifiers.hpp"
#include "beamsense/features.hpp"
#include "beamsense/mobility.hpp"

namespace beamsense {

enum class Phase { warmup, active };
enum class Action { maintain, increase, realign_now, reset_to_warmup };
enum class DetectorKind { mann_whitney, classifier };

std::string_view to_string(Phase p);
std::string_view to_string(Action a);
std::string_view to_string(DetectorKind d);

struct TrackerConfig {
  double default_interval_ms = 20.0;
  double max_interval_ms = 320.0;
  std::size_t warmup_n = 10;
  double quantile_x = 0.95;
  QuantileMode quantile_mode = QuantileMode::survival;
  double outage_threshold_db = 10.0;
  DetectorKind detector = DetectorKind::mann_whitney;
  double alpha = 0.05;
  std::size_t recheck_window = 5;
  double recheck_alpha = 0.001;
  double classifier_min_fraction = 0.8;
  bool discard_first_interval = true;
  double detect_gamma = kDetectGamma;
  double dt_ms = 1.0;  // closed-loop sample interval
};

void validate(const TrackerConfig& c);

// Statistics summarizing one warm-up/active interval.
struct IntervalRecord {
  double slope = 0.0;                // dB/ms over the first default_interval ms
  std::vector<double> short_features;  // slope, mean, variance, lag1 over the same span
  bool outage = false;
};

struct Detection {
  AppClass cls = AppClass::slow;
  std::string app;  // closest application population
  double confidence = 0.0;  // p-value (Mann-Whitney) or vote fraction (classifier)
};

struct TrackerState {
  Phase phase = Phase::warmup;
  std::vector<IntervalRecord> collected;
  std::vector<double> active_slopes;
  double current_interval_ms = 20.0;
  std::optional<Detection> detected;
  bool discard_next = true;
};

TrackerState initial_state(const TrackerConfig& c);

// Reference data the controller tests measurements against.
struct Population {
  std::vector<std::string> apps;
  std::map<std::string, std::vector<double>> slopes;   // per app
  std::map<std::string, std::vector<std::vector<double>>> short_features;
  std::map<std::string, FallTimeSummary> app_falls;    // outage-threshold fall times per app
  std::map<std::string, FallTimeSummary> class_falls;  // keyed "fast" / "slow"
  std::optional<RandomForest> classifier;               // trained on short_features, app labels
};

struct PopulationConfig {
  std::size_t traces_per_app = 200;
  double duration_ms = 2000.0;
  double dt_ms = 1.0;
  std::size_t forest_trees = 100;
};

IntervalRecord summarize_interval(const PowerTrace& segment, const TrackerConfig& cfg);

Population build_population(const std::vector<ApplicationProfile>& profiles, const GainModel& gain,
                            const WalkOptions& walk, const TrackerConfig& tcfg, const PopulationConfig& pcfg,
                            std::uint64_t seed);

// min(max_interval, quantile of fall times at the outage threshold), floored at
// default_interval; max_interval when too few traces ever cross.
double estimate_interval(const FallTimeSummary& summary, const TrackerConfig& cfg);
double estimate_interval(const Population& pop, const std::string& app_or_class, const TrackerConfig& cfg);

struct StepResult {
  TrackerState state;
  Action action = Action::maintain;
  std::optional<double> score;  // p-value or confidence of the test run this step
  bool outage = false;
};

StepResult step(const TrackerState& state, const TrackerConfig& cfg, const Population& pop,
                const PowerTrace& measurement);

std::optional<Detection> detect(const std::vector<IntervalRecord>& records, const TrackerConfig& cfg,
                                const Population& pop);

// ---- closed-loop simulation ----

struct SimEvent {
  double t_ms = 0.0;
  std::string app;
  Phase phase = Phase::warmup;
  double interval_ms = 0.0;
  Action action = Action::maintain;
  std::string detected_label;
  std::optional<double> score;
  bool outage = false;
};

struct AppSwitch {
  std::size_t at_interval = 0;
  std::string app;
};

struct SimResult {
  std::vector<SimEvent> events;
  TrackerState final_state;
  std::size_t outages_active = 0;  // outages in intervals that began in the active phase
  std::size_t outages_total = 0;
  std::vector<double> selected_intervals;  // interval chosen at each increase
};

SimResult simulate_tracker(const TrackerConfig& cfg, const Population& pop,
                           const std::vector<ApplicationProfile>& profiles, const GainModel& gain,
                           const WalkOptions& walk, const std::vector<AppSwitch>& schedule, std::size_t n_intervals,
                           std::uint64_t seed);

void write_tracking_jsonl(const std::string& path, const std::vector<SimEvent>& events);

}  // namespace beamsense
