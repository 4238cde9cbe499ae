#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "beamsense/rng.hpp"
#include "json.hpp"

namespace beamsense {

struct Dataset {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;               // indices into class_names
  std::vector<std::string> class_names;  // declaration order defines class index order
  std::vector<std::string> feature_names;

  std::size_t size() const { return rows.size(); }
  std::size_t n_features() const { return rows.empty() ? 0 : rows.front().size(); }
  std::size_t n_classes() const { return class_names.size(); }
  Dataset subset(const std::vector<std::size_t>& idx) const;
};

void validate(const Dataset& d);

double entropy(const std::vector<int>& labels);
double entropy_counts(const std::vector<std::size_t>& counts);
// Gain of splitting on x[feature] <= threshold.
double info_gain(const Dataset& d, std::size_t feature, double threshold);

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  std::vector<double> distribution;  // class frequencies at this node
  std::size_t n_samples = 0;
  double gain = 0.0;
  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int max_depth = 0;            // 0 = unlimited
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  int depth() const;
};

struct TreeParams {
  int max_depth = 3;  // <= 0 means unlimited
  std::size_t min_samples = 2;
  std::size_t max_features = 0;  // 0 means all features
};

DecisionTree train_tree(const Dataset& d, int max_depth, std::size_t min_samples = 2);
// Tree on rows `idx` (repeats allowed); `rng` is used only when max_features < n_features.
DecisionTree train_tree(const Dataset& d, const std::vector<std::size_t>& idx, const TreeParams& params, Rng* rng);

enum class Aggregation { majority, median };

struct ForestParams {
  std::size_t n_trees = 100;
  std::size_t max_features = 0;  // 0 means ceil(sqrt(d))
  bool bootstrap = true;
  int max_depth = 0;  // grown to purity by default
  std::size_t min_samples = 2;
  Aggregation aggregation = Aggregation::majority;
};

struct RandomForest {
  std::vector<DecisionTree> trees;
  std::size_t max_features = 1;
  Aggregation aggregation = Aggregation::majority;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
};

RandomForest train_forest(const Dataset& d, const ForestParams& params, std::uint64_t seed);

struct Standardizer {
  std::vector<double> mean, std;
  static Standardizer fit(const std::vector<std::vector<double>>& rows);
  std::vector<double> apply(const std::vector<double>& row) const;
};

struct KnnModel {
  std::size_t k = 3;
  Standardizer scale;
  std::vector<std::vector<double>> rows;  // standardized
  std::vector<int> labels;
  std::size_t n_classes = 0;
};

struct GnbModel {
  std::vector<double> log_prior;
  std::vector<std::vector<double>> mean, var;  // [class][feature]
  std::size_t n_features = 0;
};

inline constexpr double kGnbVarianceFloor = 1e-9;

KnnModel train_knn(const Dataset& d, std::size_t k);
GnbModel train_gnb(const Dataset& d);

int predict(const DecisionTree& m, const std::vector<double>& x);
int predict(const RandomForest& m, const std::vector<double>& x);
int predict(const KnnModel& m, const std::vector<double>& x);
int predict(const GnbModel& m, const std::vector<double>& x);
std::vector<double> vote_fractions(const RandomForest& m, const std::vector<double>& x);

template <class Model>
std::vector<int> predict_all(const Model& m, const std::vector<std::vector<double>>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(predict(m, r));
  return out;
}

struct ClassMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t support = 0;
  bool no_predictions = false;  // precision set to 0 by convention
};

struct Metrics {
  double accuracy = 0.0;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

Metrics evaluate(const std::vector<int>& predictions, const std::vector<int>& labels, std::size_t n_classes);

// Mean decrease in impurity, normalized to sum 1.
std::vector<double> feature_importance(const RandomForest& m);

inline constexpr int kModelFormatVersion = 1;
nlohmann::json to_json(const DecisionTree& m);
nlohmann::json to_json(const RandomForest& m);
nlohmann::json to_json(const KnnModel& m);
nlohmann::json to_json(const GnbModel& m);
DecisionTree tree_from_json(const nlohmann::json& j);
RandomForest forest_from_json(const nlohmann::json& j);
KnnModel knn_from_json(const nlohmann::json& j);
GnbModel gnb_from_json(const nlohmann::json& j);

}  // namespace beamsense
