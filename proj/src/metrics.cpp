#include "beamsense/classifiers.hpp"
#include "beamsense/error.hpp"

namespace beamsense {

using nlohmann::json;

Metrics evaluate(const std::vector<int>& predictions, const std::vector<int>& labels, std::size_t n_classes) {
  BEAMSENSE_REQUIRE(predictions.size() == labels.size(), "predictions and labels differ in length");
  BEAMSENSE_REQUIRE(!labels.empty(), "nothing to evaluate");
  BEAMSENSE_REQUIRE(n_classes >= 1, "n_classes must be >= 1");
  Metrics m;
  m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    BEAMSENSE_REQUIRE(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < n_classes, "label out of range");
    BEAMSENSE_REQUIRE(predictions[i] >= 0 && static_cast<std::size_t>(predictions[i]) < n_classes,
                      "prediction out of range");
    ++m.confusion[labels[i]][predictions[i]];
    correct += labels[i] == predictions[i];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    ClassMetrics cm;
    std::size_t tp = m.confusion[c][c], fn = 0, fp = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      if (k == c) continue;
      fn += m.confusion[c][k];
      fp += m.confusion[k][c];
    }
    cm.support = tp + fn;
    cm.no_predictions = tp + fp == 0;
    cm.precision = cm.no_predictions ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    cm.recall = cm.support ? static_cast<double>(tp) / static_cast<double>(cm.support) : 0.0;
    // 2PR/(P+R) written in counts, exact for rational inputs.
    cm.f1 = tp ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
    if (cm.support > 0) {
      ++present;
      m.macro_precision += cm.precision;
      m.macro_recall += cm.recall;
      m.macro_f1 += cm.f1;
    }
    m.per_class.push_back(cm);
  }
  m.macro_precision /= static_cast<double>(present);
  m.macro_recall /= static_cast<double>(present);
  m.macro_f1 /= static_cast<double>(present);
  return m;
}

// ------------------------------------------------------------ serialization

namespace {

json header(const char* kind) { return {{"format", "beamsense-model"}, {"version", kModelFormatVersion}, {"kind", kind}}; }

void check_header(const json& j, const char* kind) {
  BEAMSENSE_REQUIRE(j.value("format", "") == "beamsense-model", "not a model document");
  BEAMSENSE_REQUIRE(j.value("version", 0) == kModelFormatVersion, "unsupported model version");
  BEAMSENSE_REQUIRE(j.value("kind", "") == kind, std::string("model kind is not ") + kind);
}

json tree_body(const DecisionTree& m) {
  json nodes = json::array();
  for (const auto& n : m.nodes) {
    json jn = {{"n", n.n_samples}, {"dist", n.distribution}};
    if (!n.is_leaf()) {
      jn["feature"] = n.feature;
      jn["threshold"] = n.threshold;
      jn["left"] = n.left;
      jn["right"] = n.right;
      jn["gain"] = n.gain;
    }
    nodes.push_back(std::move(jn));
  }
  return {{"max_depth", m.max_depth}, {"n_features", m.n_features}, {"n_classes", m.n_classes}, {"nodes", nodes}};
}

DecisionTree tree_body_from(const json& j) {
  DecisionTree t;
  t.max_depth = j.at("max_depth").get<int>();
  t.n_features = j.at("n_features").get<std::size_t>();
  t.n_classes = j.at("n_classes").get<std::size_t>();
  for (const auto& jn : j.at("nodes")) {
    TreeNode n;
    n.n_samples = jn.at("n").get<std::size_t>();
    n.distribution = jn.at("dist").get<std::vector<double>>();
    if (jn.contains("feature")) {
      n.feature = jn.at("feature").get<int>();
      n.threshold = jn.at("threshold").get<double>();
      n.left = jn.at("left").get<int>();
      n.right = jn.at("right").get<int>();
      n.gain = jn.at("gain").get<double>();
    }
    t.nodes.push_back(std::move(n));
  }
  const auto count = static_cast<int>(t.nodes.size());
  BEAMSENSE_REQUIRE(count > 0, "tree has no nodes");
  for (const auto& n : t.nodes) {
    BEAMSENSE_REQUIRE(n.distribution.size() == t.n_classes, "leaf distribution size mismatch");
    if (!n.is_leaf())
      BEAMSENSE_REQUIRE(n.left > 0 && n.left < count && n.right > 0 && n.right < count &&
                            static_cast<std::size_t>(n.feature) < t.n_features,
                        "malformed tree node");
  }
  return t;
}

}  // namespace

json to_json(const DecisionTree& m) {
  json j = header("decision_tree");
  j["tree"] = tree_body(m);
  return j;
}

DecisionTree tree_from_json(const json& j) {
  check_header(j, "decision_tree");
  return tree_body_from(j.at("tree"));
}

json to_json(const RandomForest& m) {
  json j = header("random_forest");
  j["max_features"] = m.max_features;
  j["aggregation"] = m.aggregation == Aggregation::median ? "median" : "majority";
  j["n_features"] = m.n_features;
  j["n_classes"] = m.n_classes;
  j["trees"] = json::array();
  for (const auto& t : m.trees) j["trees"].push_back(tree_body(t));
  return j;
}

RandomForest forest_from_json(const json& j) {
  check_header(j, "random_forest");
  RandomForest m;
  m.max_features = j.at("max_features").get<std::size_t>();
  m.aggregation = j.at("aggregation").get<std::string>() == "median" ? Aggregation::median : Aggregation::majority;
  m.n_features = j.at("n_features").get<std::size_t>();
  m.n_classes = j.at("n_classes").get<std::size_t>();
  for (const auto& t : j.at("trees")) m.trees.push_back(tree_body_from(t));
  BEAMSENSE_REQUIRE(!m.trees.empty(), "forest has no trees");
  return m;
}

json to_json(const KnnModel& m) {
  json j = header("knn");
  j["k"] = m.k;
  j["n_classes"] = m.n_classes;
  j["standardization"] = {{"mean", m.scale.mean}, {"std", m.scale.std}};
  j["rows"] = m.rows;
  j["labels"] = m.labels;
  return j;
}

KnnModel knn_from_json(const json& j) {
  check_header(j, "knn");
  KnnModel m;
  m.k = j.at("k").get<std::size_t>();
  m.n_classes = j.at("n_classes").get<std::size_t>();
  m.scale.mean = j.at("standardization").at("mean").get<std::vector<double>>();
  m.scale.std = j.at("standardization").at("std").get<std::vector<double>>();
  m.rows = j.at("rows").get<std::vector<std::vector<double>>>();
  m.labels = j.at("labels").get<std::vector<int>>();
  BEAMSENSE_REQUIRE(m.rows.size() == m.labels.size() && m.k >= 1 && m.k <= m.rows.size(), "malformed knn model");
  return m;
}

json to_json(const GnbModel& m) {
  json j = header("gaussian_nb");
  json lp = json::array();
  for (double v : m.log_prior) lp.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  j["log_prior"] = lp;
  j["mean"] = m.mean;
  j["var"] = m.var;
  j["n_features"] = m.n_features;
  return j;
}

GnbModel gnb_from_json(const json& j) {
  check_header(j, "gaussian_nb");
  GnbModel m;
  for (const auto& v : j.at("log_prior"))
    m.log_prior.push_back(v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>());
  m.mean = j.at("mean").get<std::vector<std::vector<double>>>();
  m.var = j.at("var").get<std::vector<std::vector<double>>>();
  m.n_features = j.at("n_features").get<std::size_t>();
  return m;
}

}  // namespace beamsense
