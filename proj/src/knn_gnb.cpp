#include <algorithm>
#include <cmath>
#include <numeric>

#include "beamsense/classifiers.hpp"
#include "beamsense/error.hpp"

namespace beamsense {

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& rows) {
  BEAMSENSE_REQUIRE(!rows.empty(), "cannot standardize an empty set");
  const std::size_t f = rows.front().size();
  Standardizer s;
  s.mean.assign(f, 0.0);
  s.std.assign(f, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < f; ++j) s.mean[j] += r[j];
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t j = 0; j < f; ++j) s.std[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  for (auto& v : s.std) {
    v = std::sqrt(v / static_cast<double>(rows.size()));
    if (!(v > 0.0)) v = 1.0;  // constant column: leave centered only
  }
  return s;
}

std::vector<double> Standardizer::apply(const std::vector<double>& row) const {
  BEAMSENSE_REQUIRE(row.size() == mean.size(), "feature vector does not match the model schema");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / std[j];
  return out;
}

KnnModel train_knn(const Dataset& d, std::size_t k) {
  validate(d);
  BEAMSENSE_REQUIRE(k >= 1 && k % 2 == 1, "k must be odd and >= 1");
  BEAMSENSE_REQUIRE(k <= d.size(), "k exceeds the number of training rows");
  KnnModel m;
  m.k = k;
  m.scale = Standardizer::fit(d.rows);
  for (const auto& r : d.rows) m.rows.push_back(m.scale.apply(r));
  m.labels = d.labels;
  m.n_classes = d.n_classes();
  return m;
}

int predict(const KnnModel& m, const std::vector<double>& x) {
  BEAMSENSE_REQUIRE(!m.rows.empty(), "knn model is untrained");
  const auto z = m.scale.apply(x);
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(m.rows.size());
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) s += (m.rows[i][j] - z[j]) * (m.rows[i][j] - z[j]);
    dist.push_back({s, i});
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m.k), dist.end());
  std::vector<std::size_t> votes(m.n_classes, 0);
  for (std::size_t i = 0; i < m.k; ++i) ++votes[m.labels[dist[i].second]];
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

GnbModel train_gnb(const Dataset& d) {
  validate(d);
  const std::size_t K = d.n_classes(), f = d.n_features();
  GnbModel m;
  m.n_features = f;
  m.log_prior.assign(K, -std::numeric_limits<double>::infinity());
  m.mean.assign(K, std::vector<double>(f, 0.0));
  m.var.assign(K, std::vector<double>(f, kGnbVarianceFloor));
  std::vector<std::size_t> n(K, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    ++n[d.labels[i]];
    for (std::size_t j = 0; j < f; ++j) m.mean[d.labels[i]][j] += d.rows[i][j];
  }
  for (std::size_t c = 0; c < K; ++c) {
    if (n[c] == 0) continue;
    m.log_prior[c] = std::log(static_cast<double>(n[c]) / d.size());
    for (auto& v : m.mean[c]) v /= static_cast<double>(n[c]);
  }
  std::vector<std::vector<double>> ss(K, std::vector<double>(f, 0.0));
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double e = d.rows[i][j] - m.mean[d.labels[i]][j];
      ss[d.labels[i]][j] += e * e;
    }
  for (std::size_t c = 0; c < K; ++c)
    if (n[c] > 0)
      for (std::size_t j = 0; j < f; ++j) m.var[c][j] = std::max(kGnbVarianceFloor, ss[c][j] / n[c]);
  return m;
}

int predict(const GnbModel& m, const std::vector<double>& x) {
  BEAMSENSE_REQUIRE(!m.log_prior.empty(), "naive Bayes model is untrained");
  BEAMSENSE_REQUIRE(x.size() == m.n_features, "feature vector does not match the model schema");
  int best = -1;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < m.log_prior.size(); ++c) {
    if (!std::isfinite(m.log_prior[c])) continue;
    double ll = m.log_prior[c];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double e = x[j] - m.mean[c][j];
      ll += -0.5 * std::log(2.0 * M_PI * m.var[c][j]) - 0.5 * e * e / m.var[c][j];
    }
    if (best < 0 || ll > best_ll) best = static_cast<int>(c), best_ll = ll;
  }
  return best;
}

}  // namespace beamsense
