#include "beamsense/stattest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "beamsense/error.hpp"
#include "beamsense/rng.hpp"

namespace beamsense {

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

std::vector<std::uint64_t> mw_null_counts(std::size_t n, std::size_t m) {
  // f(i, j, u) = f(i-1, j, u-j) + f(i, j-1, u): the largest observation is
  // either an x (beating all j y's) or a y.
  std::vector<std::vector<std::vector<std::uint64_t>>> f(n + 1, std::vector<std::vector<std::uint64_t>>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) {
    for (std::size_t j = 0; j <= m; ++j) {
      auto& c = f[i][j];
      c.assign(i * j + 1, 0);
      if (i == 0 || j == 0) {
        c[0] = 1;
        continue;
      }
      const auto& a = f[i - 1][j];
      for (std::size_t u = 0; u < a.size(); ++u) c[u + j] += a[u];
      const auto& b = f[i][j - 1];
      for (std::size_t u = 0; u < b.size(); ++u) c[u] += b[u];
    }
  }
  return f[n][m];
}

MWResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
  BEAMSENSE_REQUIRE(!x.empty() && !y.empty(), "Mann-Whitney needs two non-empty samples");
  const std::size_t n = x.size(), m = y.size(), N = n + m;
  std::vector<std::pair<double, int>> all;
  all.reserve(N);
  for (double v : x) {
    BEAMSENSE_REQUIRE(std::isfinite(v), "Mann-Whitney sample is not finite");
    all.push_back({v, 0});
  }
  for (double v : y) {
    BEAMSENSE_REQUIRE(std::isfinite(v), "Mann-Whitney sample is not finite");
    all.push_back({v, 1});
  }
  std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first < b.first; });
  double rank_sum_x = 0.0, tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < N;) {
    std::size_t j = i;
    while (j < N && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    const double t = static_cast<double>(j - i);
    if (j - i > 1) ties = true;
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second == 0) rank_sum_x += midrank;
    i = j;
  }
  MWResult r;
  const double nm = static_cast<double>(n) * static_cast<double>(m);
  r.u_statistic = rank_sum_x - static_cast<double>(n) * (n + 1) / 2.0;

  if (!ties && n * m <= 400) {
    r.method = MWMethod::exact;
    const auto counts = mw_null_counts(n, m);
    const auto u = static_cast<std::size_t>(std::llround(r.u_statistic));
    std::uint64_t total = 0, le = 0, ge = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      total += counts[k];
      if (k <= u) le += counts[k];
      if (k >= u) ge += counts[k];
    }
    const double one_sided = static_cast<double>(std::min(le, ge)) / static_cast<double>(total);
    r.p_value = std::min(1.0, 2.0 * one_sided);
    return r;
  }
  r.method = MWMethod::normal_approximation;
  const double mu = nm / 2.0;
  const double var = nm / 12.0 * ((N + 1.0) - tie_term / (static_cast<double>(N) * (N - 1.0)));
  if (!(var > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, (std::abs(r.u_statistic - mu) - 0.5) / std::sqrt(var));
  r.p_value = std::clamp(2.0 * normal_sf(z), std::numeric_limits<double>::min(), 1.0);
  return r;
}

PValueMatrix pairwise_slope_matrix(const std::vector<LabeledSample>& groups, std::size_t n_series,
                                   std::uint64_t seed) {
  BEAMSENSE_REQUIRE(n_series >= 2, "n_series must be >= 2");
  BEAMSENSE_REQUIRE(!groups.empty(), "no groups given");
  const std::size_t g = groups.size();
  std::vector<std::vector<double>> sub(g);
  for (std::size_t i = 0; i < g; ++i) {
    BEAMSENSE_REQUIRE(groups[i].values.size() >= n_series,
                      "group '" + groups[i].label + "' has fewer than n_series samples");
    std::vector<std::size_t> idx(groups[i].values.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "mw-subsample:" + groups[i].label, i));
    // Partial Fisher-Yates: first n_series entries form the subsample.
    for (std::size_t k = 0; k < n_series; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
      std::swap(idx[k], idx[pick(rng)]);
      sub[i].push_back(groups[i].values[idx[k]]);
    }
  }
  PValueMatrix out;
  out.p.assign(g, std::vector<double>(g, 1.0));
  for (std::size_t i = 0; i < g; ++i) {
    out.labels.push_back(groups[i].label);
    const std::size_t half = n_series / 2;
    std::vector<double> a(sub[i].begin(), sub[i].begin() + half);
    std::vector<double> b(sub[i].begin() + half, sub[i].begin() + 2 * half);
    out.p[i][i] = mann_whitney_u(a, b).p_value;
    for (std::size_t j = i + 1; j < g; ++j) out.p[i][j] = out.p[j][i] = mann_whitney_u(sub[i], sub[j]).p_value;
  }
  return out;
}

PValueMatrix pairwise_slope_matrix(const std::vector<LabeledTraces>& groups, const WindowSpec& window,
                                   std::size_t n_series, std::uint64_t seed) {
  std::vector<LabeledSample> s;
  for (const auto& g : groups) {
    LabeledSample ls{g.label, {}};
    for (const auto& tr : g.traces) ls.values.push_back(lsf_slope(tr, window));
    s.push_back(std::move(ls));
  }
  return pairwise_slope_matrix(s, n_series, seed);
}

void write_matrix_csv(const std::string& path, const PValueMatrix& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "group";
  for (const auto& l : m.labels) f << ',' << l;
  f << '\n' << std::setprecision(10);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    f << m.labels[i];
    for (double v : m.p[i]) f << ',' << v;
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace beamsense
