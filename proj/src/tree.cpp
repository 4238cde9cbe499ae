#include <algorithm>
#include <cmath>
#include <numeric>

#include "beamsense/classifiers.hpp"
#include "beamsense/error.hpp"

namespace beamsense {

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.class_names = class_names;
  out.feature_names = feature_names;
  for (std::size_t i : idx) {
    out.rows.push_back(rows.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

void validate(const Dataset& d) {
  BEAMSENSE_REQUIRE(!d.rows.empty(), "dataset is empty");
  BEAMSENSE_REQUIRE(d.rows.size() == d.labels.size(), "rows and labels differ in length");
  BEAMSENSE_REQUIRE(!d.class_names.empty(), "dataset has no classes");
  const std::size_t f = d.rows.front().size();
  BEAMSENSE_REQUIRE(f >= 1, "dataset has no features");
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    BEAMSENSE_REQUIRE(d.rows[i].size() == f, "dataset rows have unequal length");
    for (double v : d.rows[i]) BEAMSENSE_REQUIRE(std::isfinite(v), "dataset has a non-finite feature");
    BEAMSENSE_REQUIRE(d.labels[i] >= 0 && static_cast<std::size_t>(d.labels[i]) < d.class_names.size(),
                      "label outside class range");
  }
}

double entropy_counts(const std::vector<std::size_t>& counts) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  BEAMSENSE_REQUIRE(n > 0, "entropy of an empty label set");
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return std::max(0.0, h);
}

double entropy(const std::vector<int>& labels) {
  BEAMSENSE_REQUIRE(!labels.empty(), "entropy of an empty label set");
  int top = 0;
  for (int l : labels) {
    BEAMSENSE_REQUIRE(l >= 0, "negative label");
    top = std::max(top, l);
  }
  std::vector<std::size_t> c(top + 1, 0);
  for (int l : labels) ++c[l];
  return entropy_counts(c);
}

double info_gain(const Dataset& d, std::size_t feature, double threshold) {
  validate(d);
  BEAMSENSE_REQUIRE(feature < d.n_features(), "feature index out of range");
  std::vector<std::size_t> all(d.n_classes(), 0), left(d.n_classes(), 0), right(d.n_classes(), 0);
  std::size_t nl = 0, nr = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    ++all[d.labels[i]];
    if (d.rows[i][feature] <= threshold)
      ++left[d.labels[i]], ++nl;
    else
      ++right[d.labels[i]], ++nr;
  }
  BEAMSENSE_REQUIRE(nl > 0 && nr > 0, "split leaves one side empty");
  const double n = static_cast<double>(d.size());
  const double g = entropy_counts(all) - (nl / n) * entropy_counts(left) - (nr / n) * entropy_counts(right);
  return std::max(0.0, g);
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> dep(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, dep[i]);
    if (!nodes[i].is_leaf()) dep[nodes[i].left] = dep[nodes[i].right] = dep[i] + 1;
  }
  return best;
}

namespace {

struct Builder {
  const Dataset& d;
  const TreeParams& params;
  Rng* rng;
  DecisionTree tree;
  std::size_t root_n = 0;

  std::vector<std::size_t> candidate_features() {
    const std::size_t f = d.n_features();
    std::vector<std::size_t> feats(f);
    std::iota(feats.begin(), feats.end(), 0);
    const std::size_t k = params.max_features == 0 ? f : params.max_features;
    if (k >= f) return feats;
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, f - 1);
      std::swap(feats[i], feats[pick(*rng)]);
    }
    feats.resize(k);
    std::sort(feats.begin(), feats.end());
    return feats;
  }

  int build(std::vector<std::size_t> idx, int depth) {
    const std::size_t K = d.n_classes();
    std::vector<std::size_t> counts(K, 0);
    for (auto i : idx) ++counts[d.labels[i]];
    TreeNode node;
    node.n_samples = idx.size();
    node.distribution.resize(K);
    for (std::size_t c = 0; c < K; ++c) node.distribution[c] = static_cast<double>(counts[c]) / idx.size();
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);

    const double h = entropy_counts(counts);
    const bool depth_done = params.max_depth > 0 && depth >= params.max_depth;
    if (h <= 0.0 || depth_done || idx.size() < std::max<std::size_t>(params.min_samples, 2)) return id;

    const double n = static_cast<double>(idx.size());
    double best_gain = -1.0, best_thr = 0.0;
    int best_f = -1;
    std::vector<std::size_t> order = idx;
    for (std::size_t f : candidate_features()) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return d.rows[a][f] < d.rows[b][f]; });
      std::vector<std::size_t> left(K, 0), right = counts;
      for (std::size_t p = 0; p + 1 < order.size(); ++p) {
        const int lab = d.labels[order[p]];
        ++left[lab];
        --right[lab];
        const double v = d.rows[order[p]][f], w = d.rows[order[p + 1]][f];
        if (!(v < w)) continue;
        const double nl = static_cast<double>(p + 1);
        const double g = h - (nl / n) * entropy_counts(left) - ((n - nl) / n) * entropy_counts(right);
        // Strictly better only: ties keep the lower feature / lower threshold.
        // A zero-gain split is still taken on an impure node (XOR needs it).
        if (g > best_gain + 1e-12) {
          best_gain = g;
          best_f = static_cast<int>(f);
          best_thr = v + (w - v) / 2.0;
          if (!(best_thr < w)) best_thr = v;
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<std::size_t> li, ri;
    for (auto i : idx) (d.rows[i][best_f] <= best_thr ? li : ri).push_back(i);
    tree.nodes[id].feature = best_f;
    tree.nodes[id].threshold = best_thr;
    tree.nodes[id].gain = std::max(0.0, best_gain);
    const int l = build(std::move(li), depth + 1);
    const int r = build(std::move(ri), depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

}  // namespace

DecisionTree train_tree(const Dataset& d, const std::vector<std::size_t>& idx, const TreeParams& params, Rng* rng) {
  validate(d);
  BEAMSENSE_REQUIRE(!idx.empty(), "no training rows");
  BEAMSENSE_REQUIRE(params.max_features <= d.n_features(), "max_features exceeds feature count");
  if (params.max_features != 0 && params.max_features < d.n_features())
    BEAMSENSE_REQUIRE(rng != nullptr, "feature subsampling needs a random stream");
  Builder b{d, params, rng, {}, idx.size()};
  b.tree.max_depth = std::max(0, params.max_depth);
  b.tree.n_features = d.n_features();
  b.tree.n_classes = d.n_classes();
  b.build(idx, 0);
  return std::move(b.tree);
}

DecisionTree train_tree(const Dataset& d, int max_depth, std::size_t min_samples) {
  validate(d);
  BEAMSENSE_REQUIRE(max_depth >= 1, "max_depth must be >= 1");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  TreeParams p;
  p.max_depth = max_depth;
  p.min_samples = min_samples;
  return train_tree(d, idx, p, nullptr);
}

int predict(const DecisionTree& m, const std::vector<double>& x) {
  BEAMSENSE_REQUIRE(!m.nodes.empty(), "tree is untrained");
  BEAMSENSE_REQUIRE(x.size() == m.n_features, "feature vector does not match the model schema");
  int i = 0;
  while (!m.nodes[i].is_leaf()) i = x[m.nodes[i].feature] <= m.nodes[i].threshold ? m.nodes[i].left : m.nodes[i].right;
  const auto& dist = m.nodes[i].distribution;
  return static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

}  // namespace beamsense
