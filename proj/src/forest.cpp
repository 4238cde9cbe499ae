#include <algorithm>
#include <cmath>
#include <numeric>

#include "beamsense/classifiers.hpp"
#include "beamsense/error.hpp"

namespace beamsense {

RandomForest train_forest(const Dataset& d, const ForestParams& params, std::uint64_t seed) {
  validate(d);
  BEAMSENSE_REQUIRE(params.n_trees >= 1, "n_trees must be >= 1");
  const std::size_t f = d.n_features();
  const std::size_t mf =
      params.max_features == 0 ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(f)))) : params.max_features;
  BEAMSENSE_REQUIRE(mf >= 1 && mf <= f, "max_features must be in [1, n_features]");
  RandomForest forest;
  forest.max_features = mf;
  forest.aggregation = params.aggregation;
  forest.n_features = f;
  forest.n_classes = d.n_classes();
  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_samples = params.min_samples;
  tp.max_features = mf;
  for (std::size_t t = 0; t < params.n_trees; ++t) {
    Rng rng(derive_seed(seed, "forest-tree", t));
    std::vector<std::size_t> idx(d.size());
    if (params.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, d.size() - 1);
      for (auto& i : idx) i = pick(rng);
    } else {
      std::iota(idx.begin(), idx.end(), 0);
    }
    forest.trees.push_back(train_tree(d, idx, tp, &rng));
  }
  return forest;
}

std::vector<double> vote_fractions(const RandomForest& m, const std::vector<double>& x) {
  BEAMSENSE_REQUIRE(!m.trees.empty(), "forest is untrained");
  std::vector<double> v(m.n_classes, 0.0);
  for (const auto& t : m.trees) v[predict(t, x)] += 1.0;
  for (auto& e : v) e /= static_cast<double>(m.trees.size());
  return v;
}

int predict(const RandomForest& m, const std::vector<double>& x) {
  BEAMSENSE_REQUIRE(!m.trees.empty(), "forest is untrained");
  BEAMSENSE_REQUIRE(x.size() == m.n_features, "feature vector does not match the model schema");
  if (m.aggregation == Aggregation::median) {
    std::vector<int> votes;
    for (const auto& t : m.trees) votes.push_back(predict(t, x));
    std::sort(votes.begin(), votes.end());
    return votes[(votes.size() - 1) / 2];  // lower median
  }
  std::vector<std::size_t> counts(m.n_classes, 0);
  for (const auto& t : m.trees) ++counts[predict(t, x)];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::vector<double> feature_importance(const RandomForest& m) {
  BEAMSENSE_REQUIRE(!m.trees.empty(), "forest is untrained");
  std::vector<double> total(m.n_features, 0.0);
  for (const auto& t : m.trees) {
    const double root_n = static_cast<double>(t.nodes.front().n_samples);
    for (const auto& node : t.nodes)
      if (!node.is_leaf()) total[node.feature] += node.gain * static_cast<double>(node.n_samples) / root_n;
  }
  double sum = 0.0;
  for (auto& v : total) {
    v /= static_cast<double>(m.trees.size());
    sum += v;
  }
  if (!(sum > 0.0)) return std::vector<double>(m.n_features, 1.0 / static_cast<double>(m.n_features));
  for (auto& v : total) v /= sum;
  return total;
}

}  // namespace beamsense
