#pragma once
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "beamsense/calibration.hpp"
#include "beamsense/classifiers.hpp"
#include "beamsense/config.hpp"
#include "beamsense/stattest.hpp"
#include "json.hpp"

namespace beamsense {

// ---- in-memory building blocks shared by the stages and the acceptance checks ----

// Profiles and gain after applying `cal` to the configured ones.
struct CalibratedSetup {
  std::vector<ApplicationProfile> profiles;
  GainModel gain;
};
CalibratedSetup calibrated_setup(const ExperimentConfig& cfg, const CalibrationResult& cal);
// The configured values as a calibration result, for runs with calibrate = false.
CalibrationResult uncalibrated_result(const ExperimentConfig& cfg);

nlohmann::ordered_json calibration_to_json(const CalibrationResult& cal, bool fitted);
CalibrationResult calibration_from_json(const nlohmann::json& j);

// Corpus trace i of app a uses walk seed derive(seed, "corpus-walk:<app>", i).
std::vector<LabeledTraces> synth_corpus(const std::vector<ApplicationProfile>& profiles, const GainModel& gain,
                                        const WalkOptions& walk, const CorpusConfig& corpus, double dt_ms,
                                        std::uint64_t seed);

// Pools application groups into "slow" / "fast" groups, in order of first appearance.
std::vector<LabeledTraces> group_by_class(const std::vector<LabeledTraces>& apps,
                                          const std::vector<ApplicationProfile>& profiles);

enum class LabelLevel { app, cls };

Dataset feature_dataset(const std::vector<LabeledTraces>& apps, const std::vector<ApplicationProfile>& profiles,
                        const WindowSpec& window, const StftParams& stft, LabelLevel level);

// Train-index sets, one per repetition, stratified by `strata`.
std::vector<std::vector<std::size_t>> stratified_splits(const std::vector<int>& strata, std::size_t repetitions,
                                                        double train_fraction, std::uint64_t seed);

struct ScoreStats {
  double mean = 0.0, std = 0.0;  // population std over repetitions
};

struct ClassifierScores {
  std::string classifier;  // tree, forest, knn, gnb
  std::vector<double> accuracy_runs;
  ScoreStats accuracy, precision, recall, f1;  // macro precision/recall/F1
};

struct ClassificationReport {
  std::string level;
  std::vector<std::string> class_names;
  std::vector<ClassifierScores> scores;
  std::vector<double> importance;  // forest MDI averaged over repetitions
};

ClassificationReport run_classification(const Dataset& d, const std::vector<std::vector<std::size_t>>& splits,
                                        const ClassifyConfig& cfg, std::uint64_t seed, const std::string& level);

struct EnsembleDynamics {
  std::string app;
  std::vector<double> t_ms, mean_db, std_db;
  FallTimeSummary falls;
  double mean_drop_at(double t_ms) const;  // mean(0) - mean(t) at the nearest grid point
};

EnsembleDynamics simulate_dynamics(const ApplicationProfile& profile, const GainModel& gain, const WalkOptions& walk,
                                   double dt_ms, std::size_t n_traces, double duration_ms, double grid_step_ms,
                                   const std::vector<double>& thresholds_db, double gamma, std::uint64_t seed);

// ---- stage runner ----

const std::vector<std::string>& pipeline_stages();
// Comma-separated stage names; "all" selects everything. Result follows pipeline order.
std::vector<std::string> parse_stage_list(const std::string& list);

struct PipelineOptions {
  std::filesystem::path out_dir = "out";
  bool force = false;
  std::vector<std::string> stages;  // empty runs every stage
};

// Runs the selected stages in pipeline order. Throws StageError naming the failing
// stage; files written earlier in the same run are removed.
void run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opts);

}  // namespace beamsense
