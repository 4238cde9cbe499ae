#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "beamsense/calibration.hpp"
#include "beamsense/channel.hpp"
#include "beamsense/classifiers.hpp"
#include "beamsense/features.hpp"
#include "beamsense/mobility.hpp"
#include "beamsense/tracker.hpp"
#include "json.hpp"

namespace beamsense {

struct CorpusConfig {
  std::size_t traces_per_app = 30;
  double duration_ms = 1000.0;
};

struct DynamicsConfig {
  std::size_t traces_per_app = 100;
  double duration_ms = 6000.0;
  double video_duration_ms = 30000.0;  // long enough to show the absent 3 dB crossing
  double grid_step_ms = 50.0;
  std::vector<double> thresholds_db{3.0, 5.0, 7.0, 10.0, 15.0};
};

struct FeatureConfig {
  WindowSpec window{0.0, 300.0};
  StftParams stft;
  std::vector<WindowSpec> pca_windows{{0.0, 100.0}, {50.0, 150.0}, {0.0, 300.0}};
  std::vector<double> slope_window_ends{20, 50, 100, 150, 200, 300, 500, 1000};
};

struct MwConfig {
  std::vector<WindowSpec> windows{{0.0, 100.0}, {50.0, 150.0}};
  std::vector<std::size_t> n_series{10, 30};
};

struct ClassifyConfig {
  std::size_t repetitions = 20;
  double train_fraction = 0.5;
  int tree_depth = 3;
  std::size_t forest_trees = 100;
  Aggregation forest_aggregation = Aggregation::majority;
  std::size_t knn_k = 3;
};

struct TrackConfig {
  TrackerConfig controller;
  PopulationConfig population;
  std::size_t intervals_per_app = 2500;
  std::string switch_from = "video";
  std::string switch_to = "racing";
  std::size_t switch_at = 200;
  std::size_t switch_intervals = 400;
};

struct ExperimentConfig {
  std::uint64_t seed = 20240601;
  double dt_ms = 1.0;
  std::vector<ApplicationProfile> profiles = default_profiles();
  WalkOptions walk;
  GainModel channel;
  bool calibrate = true;
  CalibrationConfig calibration;
  std::vector<FallTarget> targets = default_fall_targets();
  CorpusConfig corpus;
  DynamicsConfig dynamics;
  FeatureConfig features;
  MwConfig mwtest;
  ClassifyConfig classify;
  TrackConfig track;
};

void validate(const ExperimentConfig& c);

nlohmann::ordered_json to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

}  // namespace beamsense
