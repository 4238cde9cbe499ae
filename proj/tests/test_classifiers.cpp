#include <algorithm>
#include <cmath>

#include "beamsense/classifiers.hpp"
#include "beamsense/error.hpp"
#include "doctest.h"

using namespace beamsense;

namespace {

Dataset make(std::vector<std::vector<double>> rows, std::vector<int> labels, std::size_t n_classes = 2) {
  Dataset d;
  d.rows = std::move(rows);
  d.labels = std::move(labels);
  for (std::size_t c = 0; c < n_classes; ++c) d.class_names.push_back("c" + std::to_string(c));
  for (std::size_t f = 0; f < d.rows.front().size(); ++f) d.feature_names.push_back("f" + std::to_string(f));
  return d;
}

// Two Gaussian blobs in `dims` dimensions; only the first coordinate carries the label.
Dataset noisy_blobs(std::uint64_t seed, std::size_t n, std::size_t dims, double separation, double label_noise) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    std::vector<double> r(dims);
    for (auto& v : r) v = g(rng);
    r[0] += y ? separation : 0.0;
    r[1] += y ? 0.5 * separation : 0.0;
    rows.push_back(r);
    labels.push_back(uniform01(rng) < label_noise ? 1 - y : y);
  }
  return make(rows, labels);
}

DecisionTree leaf_tree(std::vector<double> dist) {
  DecisionTree t;
  TreeNode n;
  n.distribution = std::move(dist);
  n.n_samples = 1;
  t.nodes.push_back(n);
  t.n_features = 1;
  t.n_classes = t.nodes[0].distribution.size();
  return t;
}

double accuracy(const std::vector<int>& p, const std::vector<int>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += p[i] == y[i];
  return static_cast<double>(ok) / p.size();
}

}  // namespace

TEST_CASE("entropy examples") {
  CHECK(entropy({1, 1, 1}) == 0.0);
  CHECK(entropy({0, 1, 0, 1}) == doctest::Approx(1.0));
  // -(2/8) log2(2/8) - 2 (3/8) log2(3/8)
  const double want = -0.25 * std::log2(0.25) - 0.75 * std::log2(0.375);
  CHECK(entropy({0, 0, 1, 1, 1, 2, 2, 2}) == doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(1.5613).epsilon(1e-4));
  CHECK(entropy_counts({2, 3, 3}) == doctest::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(entropy({}), ValidationError);
  for (int k = 2; k <= 6; ++k) {
    std::vector<int> l;
    for (int c = 0; c < k; ++c) l.push_back(c);
    CHECK(entropy(l) == doctest::Approx(std::log2(k)));
  }
}

TEST_CASE("information gain examples") {
  // Parent 4/4 (1 bit); left = 2 rows of class 0, right = 2 of class 0 and 4 of class 1 (0.918 bits).
  const auto d = make({{0}, {1}, {2}, {3}, {4}, {5}, {6}, {7}}, {0, 0, 0, 0, 1, 1, 1, 1});
  const double h6 = -(2.0 / 6) * std::log2(2.0 / 6) - (4.0 / 6) * std::log2(4.0 / 6);
  CHECK(info_gain(d, 0, 1.5) == doctest::Approx(1.0 - 0.75 * h6).epsilon(1e-12));
  CHECK(info_gain(d, 0, 1.5) == doctest::Approx(0.3113).epsilon(1e-4));
  CHECK(info_gain(d, 0, 3.5) == doctest::Approx(1.0));
  const auto flat = make({{0}, {1}, {0}, {1}}, {0, 0, 1, 1});
  CHECK(std::abs(info_gain(flat, 0, 0.5)) < 1e-12);
  CHECK_THROWS_AS(info_gain(d, 0, 10.0), ValidationError);
}

TEST_CASE("tree training examples") {
  const auto one = make({{1.0}, {2.0}, {3.0}}, {1, 1, 1});
  const auto t1 = train_tree(one, 3);
  CHECK(t1.nodes.size() == 1);
  CHECK(predict(t1, {0.0}) == 1);

  const auto sep = make({{-2.0}, {-1.0}, {-0.5}, {0.5}, {1.0}, {2.0}}, {0, 0, 0, 1, 1, 1});
  const auto t2 = train_tree(sep, 3);
  CHECK(t2.depth() == 1);
  CHECK(t2.nodes[0].threshold == 0.0);
  CHECK(accuracy(predict_all(t2, sep.rows), sep.labels) == 1.0);

  // XOR on the unit corners, two copies each: every stump is right on exactly half the rows.
  const std::vector<std::vector<double>> xr{{0, 0}, {1, 1}, {0, 1}, {1, 0}, {0, 0}, {1, 1}, {0, 1}, {1, 0}};
  const std::vector<int> xl{0, 0, 1, 1, 0, 0, 1, 1};
  const auto xor_d = make(xr, xl);
  for (std::size_t f = 0; f < 2; ++f)
    for (int lo = 0; lo < 2; ++lo)
      for (int hi = 0; hi < 2; ++hi) {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < xr.size(); ++i) ok += (xr[i][f] <= 0.5 ? lo : hi) == xl[i];
        REQUIRE(ok * 2 <= xr.size());
      }
  CHECK(accuracy(predict_all(train_tree(xor_d, 1), xr), xl) <= 0.5);
  CHECK(accuracy(predict_all(train_tree(xor_d, 2), xr), xl) == 1.0);
  CHECK_THROWS_AS(train_tree(xor_d, 0), ValidationError);
  CHECK_THROWS_AS(predict(t2, {1.0, 2.0}), ValidationError);
}

TEST_CASE("tree structure invariants and full-depth fit") {
  const auto d = noisy_blobs(3, 150, 4, 1.0, 0.1);
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  TreeParams p;
  p.max_depth = 0;
  const auto t = train_tree(d, all, p, nullptr);
  CHECK(accuracy(predict_all(t, d.rows), d.labels) == 1.0);
  for (const auto& n : t.nodes) {
    double s = 0.0;
    for (double v : n.distribution) s += v;
    REQUIRE(s == doctest::Approx(1.0).epsilon(1e-12));
    if (!n.is_leaf()) {
      REQUIRE(t.nodes[n.left].n_samples > 0);
      REQUIRE(t.nodes[n.right].n_samples > 0);
      REQUIRE(t.nodes[n.left].n_samples + t.nodes[n.right].n_samples == n.n_samples);
    }
  }
  const auto t3 = train_tree(d, 3);
  CHECK(t3.depth() <= 3);
}

TEST_CASE("tree predictions survive monotone feature transforms") {
  const auto d = noisy_blobs(4, 120, 3, 1.5, 0.05);
  auto warped = d;
  for (auto& r : warped.rows) r = {std::exp(r[0]), r[1] * r[1] * r[1], 5.0 * r[2] - 1.0};
  const auto a = train_tree(d, 3), b = train_tree(warped, 3);
  const auto probe = noisy_blobs(5, 200, 3, 1.5, 0.0);
  for (const auto& r : probe.rows)
    REQUIRE(predict(a, r) == predict(b, {std::exp(r[0]), r[1] * r[1] * r[1], 5.0 * r[2] - 1.0}));
}

TEST_CASE("forest of one unsampled tree equals the unlimited tree") {
  const auto d = noisy_blobs(6, 100, 4, 1.0, 0.15);
  ForestParams p;
  p.n_trees = 1;
  p.bootstrap = false;
  p.max_features = d.n_features();
  const auto f = train_forest(d, p, 1);
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  TreeParams tp;
  tp.max_depth = 0;
  const auto t = train_tree(d, all, tp, nullptr);
  const auto probe = noisy_blobs(7, 300, 4, 1.0, 0.0);
  CHECK(predict_all(f, probe.rows) == predict_all(t, probe.rows));
}

TEST_CASE("forests are deterministic in the seed") {
  const auto d = noisy_blobs(8, 80, 6, 1.0, 0.1);
  ForestParams p;
  p.n_trees = 20;
  const auto a = train_forest(d, p, 42), b = train_forest(d, p, 42), c = train_forest(d, p, 43);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(to_json(a).dump() != to_json(c).dump());
  CHECK(a.max_features == 3);  // ceil(sqrt(6))
}

TEST_CASE("forest aggregation") {
  RandomForest f;
  f.n_features = 1;
  f.n_classes = 2;
  f.trees = {leaf_tree({1.0, 0.0}), leaf_tree({1.0, 0.0}), leaf_tree({0.0, 1.0})};
  CHECK(predict(f, {0.0}) == 0);
  const auto v = vote_fractions(f, {0.0});
  CHECK(v[0] == doctest::Approx(2.0 / 3.0));

  // Median of class indices {0, 2, 2, 1} is the lower middle value 1; majority is 2.
  RandomForest m;
  m.n_features = 1;
  m.n_classes = 3;
  m.trees = {leaf_tree({1, 0, 0}), leaf_tree({0, 0, 1}), leaf_tree({0, 0, 1}), leaf_tree({0, 1, 0})};
  m.aggregation = Aggregation::majority;
  CHECK(predict(m, {0.0}) == 2);
  m.aggregation = Aggregation::median;
  CHECK(predict(m, {0.0}) == 1);

  // Majority tie goes to the lowest class.
  RandomForest tie;
  tie.n_features = 1;
  tie.n_classes = 2;
  tie.trees = {leaf_tree({0.0, 1.0}), leaf_tree({1.0, 0.0})};
  CHECK(predict(tie, {0.0}) == 0);
}

TEST_CASE("forest beats a depth-3 tree on noisy data") {
  double forest_acc = 0.0, tree_acc = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto all = noisy_blobs(derive_seed(9, "forest-vs-tree", s), 400, 6, 1.2, 0.1);
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < all.size(); ++i) ((i / 2) % 2 ? te : tr).push_back(i);
    const auto train = all.subset(tr), test = all.subset(te);
    ForestParams p;
    p.n_trees = 100;
    forest_acc += accuracy(predict_all(train_forest(train, p, s), test.rows), test.labels);
    tree_acc += accuracy(predict_all(train_tree(train, 3), test.rows), test.labels);
  }
  MESSAGE("forest " << forest_acc / 20 << ", tree " << tree_acc / 20);
  CHECK(forest_acc >= tree_acc);
}

TEST_CASE("knn examples") {
  const auto d = noisy_blobs(10, 31, 3, 1.0, 0.3);
  const auto k1 = train_knn(d, 1);
  for (std::size_t i = 0; i < d.size(); ++i) REQUIRE(predict(k1, d.rows[i]) == d.labels[i]);

  const auto kn = train_knn(d, d.size());
  const int majority = std::count(d.labels.begin(), d.labels.end(), 1) * 2 > static_cast<long>(d.size()) ? 1 : 0;
  const auto probe = noisy_blobs(11, 50, 3, 5.0, 0.0);
  for (const auto& r : probe.rows) REQUIRE(predict(kn, r) == majority);

  CHECK_THROWS_AS(train_knn(d, 2), ValidationError);
  CHECK_THROWS_AS(train_knn(d, 33), ValidationError);
}

TEST_CASE("gaussian naive Bayes examples") {
  Rng rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> rows, test_rows;
  std::vector<int> labels, test_labels;
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    rows.push_back({g(rng) + 10.0 * y});
    labels.push_back(y);
    test_rows.push_back({g(rng) + 10.0 * y});
    test_labels.push_back(y);
  }
  const auto m = train_gnb(make(rows, labels));
  CHECK(accuracy(predict_all(m, test_rows), test_labels) >= 0.995);

  // Equal priors, means 0 and 2, unit variances: x = 1 is equidistant.
  GnbModel h;
  h.n_features = 1;
  h.log_prior = {std::log(0.5), std::log(0.5)};
  h.mean = {{0.0}, {2.0}};
  h.var = {{1.0}, {1.0}};
  CHECK(predict(h, {1.0}) == 0);
  CHECK(predict(h, {1.01}) == 1);

  // Constant feature within a class still trains thanks to the variance floor.
  const auto c = train_gnb(make({{1.0}, {1.0}, {3.0}, {3.0}}, {0, 0, 1, 1}));
  CHECK(c.var[0][0] == kGnbVarianceFloor);
  CHECK(predict(c, {1.0}) == 0);
  CHECK(predict(c, {3.0}) == 1);
}

TEST_CASE("evaluation metrics") {
  // Class 1: TP 2, FP 1, FN 1; class 0: TP 2, FP 1, FN 1.
  const std::vector<int> y{1, 1, 1, 0, 0, 0}, p{1, 1, 0, 1, 0, 0};
  const auto m = evaluate(p, y, 2);
  CHECK(m.per_class[1].precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class[1].recall == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class[1].f1 == doctest::Approx(2.0 / 3.0));
  CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(m.confusion[1][0] == 1);
  CHECK(m.confusion[0][1] == 1);

  const auto perfect = evaluate(y, y, 2);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);

  const auto none = evaluate({0, 0, 0}, {0, 1, 1}, 2);
  CHECK(none.per_class[1].no_predictions);
  CHECK(none.per_class[1].precision == 0.0);
  CHECK(none.macro_f1 < 1.0);
  CHECK_THROWS_AS(evaluate({0}, {0, 1}, 2), ValidationError);

  Rng rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> a, b;
    for (int i = 0; i < 30; ++i) a.push_back(static_cast<int>(uniform01(rng) * 4)), b.push_back(static_cast<int>(uniform01(rng) * 4));
    const auto r = evaluate(a, b, 4);
    std::size_t trace = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      trace += r.confusion[c][c];
      std::size_t row = 0;
      for (auto v : r.confusion[c]) row += v;
      REQUIRE(row == r.per_class[c].support);
    }
    REQUIRE(r.accuracy == doctest::Approx(trace / 30.0));
    REQUIRE(r.macro_f1 <= 1.0);
    REQUIRE(r.macro_f1 >= 0.0);
  }
}

TEST_CASE("feature importance") {
  Rng rng(14);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    // One informative feature plus five pure-noise features.
    rows.push_back({2.0 * y + g(rng), g(rng), g(rng), g(rng), g(rng), g(rng)});
    labels.push_back(y);
  }
  ForestParams p;
  p.n_trees = 100;
  const auto imp = feature_importance(train_forest(make(rows, labels), p, 5));
  double s = 0.0;
  for (double v : imp) s += v;
  CHECK(std::abs(s - 1.0) < 1e-9);
  CHECK(imp[0] > 0.5);
  CHECK_THROWS_AS(feature_importance(RandomForest{}), ValidationError);
}

TEST_CASE("model JSON round trips") {
  const auto d = noisy_blobs(15, 60, 3, 1.0, 0.1);
  const auto probe = noisy_blobs(16, 100, 3, 1.0, 0.0);
  ForestParams p;
  p.n_trees = 10;
  p.aggregation = Aggregation::median;
  const auto f = train_forest(d, p, 3);
  const auto t = train_tree(d, 3);
  const auto k = train_knn(d, 3);
  const auto g = train_gnb(d);
  const auto f2 = forest_from_json(nlohmann::json::parse(to_json(f).dump()));
  const auto t2 = tree_from_json(nlohmann::json::parse(to_json(t).dump()));
  const auto k2 = knn_from_json(nlohmann::json::parse(to_json(k).dump()));
  const auto g2 = gnb_from_json(nlohmann::json::parse(to_json(g).dump()));
  CHECK(f2.aggregation == Aggregation::median);
  CHECK(predict_all(f2, probe.rows) == predict_all(f, probe.rows));
  CHECK(predict_all(t2, probe.rows) == predict_all(t, probe.rows));
  CHECK(predict_all(k2, probe.rows) == predict_all(k, probe.rows));
  CHECK(predict_all(g2, probe.rows) == predict_all(g, probe.rows));
  CHECK(to_json(f2).dump() == to_json(f).dump());
  CHECK_THROWS_AS(tree_from_json(to_json(f)), ValidationError);
}
