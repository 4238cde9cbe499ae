#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "beamsense/channel.hpp"
#include "beamsense/features.hpp"
#include "beamsense/mobility.hpp"

namespace beamsense {

// Target mean fall times (ms); absent when the measurement never crossed.
struct FallTarget {
  std::string app;
  std::optional<double> mean_3db;
  std::optional<double> mean_10db;
};

std::vector<FallTarget> default_fall_targets();

struct CalibrationConfig {
  std::vector<double> hpbw_grid{6.0, 7.0, 8.0};
  double k_min = 0.01;  // plane_to_angle search range, deg/m
  double k_max = 100.0;
  int grid_points = 40;
  int refine_iters = 12;
  std::size_t n_traces = 200;
  double dt_ms = 1.0;
  double horizon_ms = 3000.0;  // fit horizon; later crossings are censored
  double gamma = kDetectGamma;
  double residual_bound = 0.5;  // RMS log-ratio allowed for unconstrained fits
  // Slow profiles must not reach the outage level before guard_ms.
  double outage_threshold_db = 10.0;
  double guard_ms = 480.0;
  // Profiles without targets must (almost) never lose 3 dB.
  double never_cross_threshold_db = 3.0;
  double never_cross_horizon_ms = 30000.0;
  double never_cross_max_fraction = 0.01;
  std::size_t never_cross_traces = 1000;
  std::uint64_t seed = 0x5eed;
};

void validate(const CalibrationConfig& c);

struct ProfileCalibration {
  std::string app;
  double plane_to_angle = 1.0;
  double restricted_mean_3db = 0.0;
  double restricted_mean_10db = 0.0;
  double crossing_fraction_3db = 0.0;
  double crossing_fraction_10db = 0.0;
  double residual = 0.0;  // RMS log-ratio against available targets (0 when none)
  std::string constraint;  // empty, "outage_guard" or "never_cross"
  bool constraint_binding = false;
};

struct CalibrationResult {
  double hpbw_deg = 7.0;
  double selection_cost = 0.0;
  std::vector<ProfileCalibration> profiles;
  const ProfileCalibration* find(const std::string& app) const;
};

// Simulated crossing times of one profile; trace i uses seeds derived from (seed, app, i).
std::vector<std::vector<std::optional<double>>> simulate_fall_times(const ApplicationProfile& profile,
                                                                    const GainModel& gain, const WalkOptions& walk,
                                                                    double dt_ms, std::size_t n_traces,
                                                                    double horizon_ms,
                                                                    const std::vector<double>& thresholds_db,
                                                                    double gamma, std::uint64_t seed,
                                                                    std::size_t abort_after_crossings = 0);

// Fits the shared beamwidth and per-profile plane_to_angle. Throws CalibrationError
// when an unconstrained fit misses its targets by more than residual_bound.
CalibrationResult calibrate_channel(const std::vector<ApplicationProfile>& profiles,
                                    const std::vector<FallTarget>& targets, const GainModel& gain,
                                    const WalkOptions& walk, const CalibrationConfig& cfg);

// Writes the fitted values into profiles and gain.
void apply_calibration(const CalibrationResult& cal, std::vector<ApplicationProfile>& profiles, GainModel& gain);

}  // namespace beamsense
