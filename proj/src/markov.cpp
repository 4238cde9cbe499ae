#include <algorithm>
#include <cmath>

#include "beamsense/error.hpp"
#include "beamsense/mobility.hpp"

namespace beamsense {

std::uint32_t MarkovModel2D::cell_of(const AngularOffset& a) const {
  auto index = [this](double v, double lo, double hi) {
    const double f = (v - lo) / (hi - lo) * grid_n;
    return static_cast<std::uint32_t>(std::clamp(static_cast<int>(std::floor(f)), 0, grid_n - 1));
  };
  return index(a.y, bounds.y_min, bounds.y_max) * static_cast<std::uint32_t>(grid_n) +
         index(a.x, bounds.x_min, bounds.x_max);
}

AngularOffset MarkovModel2D::center(std::uint32_t cell) const {
  const std::uint32_t ix = cell % static_cast<std::uint32_t>(grid_n);
  const std::uint32_t iy = cell / static_cast<std::uint32_t>(grid_n);
  const double wx = (bounds.x_max - bounds.x_min) / grid_n;
  const double wy = (bounds.y_max - bounds.y_min) / grid_n;
  return {bounds.x_min + (ix + 0.5) * wx, bounds.y_min + (iy + 0.5) * wy};
}

double MarkovModel2D::prob(std::uint32_t from, std::uint32_t to) const {
  const auto& row = rows.at(from);
  auto it = std::lower_bound(row.begin(), row.end(), to,
                             [](const std::pair<std::uint32_t, double>& e, std::uint32_t v) { return e.first < v; });
  return (it != row.end() && it->first == to) ? it->second : 0.0;
}

void validate(const MarkovModel2D& m) {
  BEAMSENSE_REQUIRE(m.grid_n >= 2, "grid_n must be >= 2");
  BEAMSENSE_REQUIRE(m.bounds.x_max > m.bounds.x_min && m.bounds.y_max > m.bounds.y_min, "empty bounds");
  BEAMSENSE_REQUIRE(m.rows.size() == m.cell_count(), "transition row count does not match grid");
  BEAMSENSE_REQUIRE(m.initial_cell < m.cell_count(), "initial cell outside grid");
  for (const auto& row : m.rows) {
    BEAMSENSE_REQUIRE(!row.empty(), "empty transition row");
    double sum = 0.0;
    for (const auto& [to, p] : row) {
      BEAMSENSE_REQUIRE(to < m.cell_count(), "transition target outside grid");
      BEAMSENSE_REQUIRE(p >= 0.0 && std::isfinite(p), "negative or non-finite transition probability");
      sum += p;
    }
    BEAMSENSE_REQUIRE(std::abs(sum - 1.0) <= 1e-12, "transition row does not sum to 1");
  }
}

MarkovModel2D fit_markov2d(const std::vector<BeamCenterTrace>& traces, int grid_n, const Bounds& bounds) {
  BEAMSENSE_REQUIRE(!traces.empty(), "fit_markov2d needs at least one trace");
  BEAMSENSE_REQUIRE(grid_n >= 2, "grid_n must be >= 2");
  BEAMSENSE_REQUIRE(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min, "empty bounds");
  MarkovModel2D m;
  m.grid_n = grid_n;
  m.bounds = bounds;
  m.initial_cell = m.cell_of({0.0, 0.0});

  std::vector<std::uint64_t> keys;
  for (const auto& tr : traces) {
    BEAMSENSE_REQUIRE(!tr.samples.empty(), "trace without samples");
    std::uint32_t prev = 0;
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
      BEAMSENSE_REQUIRE(bounds.contains(tr.samples[i]), "sample outside grid bounds");
      const std::uint32_t c = m.cell_of(tr.samples[i]);
      if (i > 0) keys.push_back((static_cast<std::uint64_t>(prev) << 32) | c);
      prev = c;
    }
  }
  std::sort(keys.begin(), keys.end());

  m.rows.assign(m.cell_count(), {});
  std::vector<std::uint64_t> counts;
  for (std::size_t i = 0; i < keys.size();) {
    std::size_t j = i;
    while (j < keys.size() && keys[j] == keys[i]) ++j;
    const auto from = static_cast<std::uint32_t>(keys[i] >> 32);
    const auto to = static_cast<std::uint32_t>(keys[i] & 0xFFFFFFFFu);
    m.rows[from].push_back({to, static_cast<double>(j - i)});
    i = j;
  }
  for (std::uint32_t c = 0; c < m.cell_count(); ++c) {
    auto& row = m.rows[c];
    if (row.empty()) {
      row.push_back({c, 1.0});
      continue;
    }
    double total = 0.0;
    for (const auto& e : row) total += e.second;
    for (auto& e : row) e.second /= total;
    // Put any rounding residue on the largest entry so the row sums to 1.
    double sum = 0.0;
    for (const auto& e : row) sum += e.second;
    auto big = std::max_element(row.begin(), row.end(), [](auto& a, auto& b) { return a.second < b.second; });
    big->second += 1.0 - sum;
  }
  return m;
}

BeamCenterTrace sample_markov2d(const MarkovModel2D& model, double duration_ms, double dt_ms, std::uint64_t seed) {
  validate(model);
  BEAMSENSE_REQUIRE(std::isfinite(dt_ms) && dt_ms > 0.0, "dt must be > 0");
  BEAMSENSE_REQUIRE(std::isfinite(duration_ms) && duration_ms >= dt_ms, "duration must be >= dt");
  const auto n = static_cast<std::size_t>(std::floor(duration_ms / dt_ms + 1e-9)) + 1;
  Rng rng(seed);
  BeamCenterTrace tr;
  tr.dt_ms = dt_ms;
  tr.app_id = "markov2d";
  tr.samples.reserve(n);
  std::uint32_t cell = model.initial_cell;
  tr.samples.push_back(model.center(cell));
  for (std::size_t i = 1; i < n; ++i) {
    const auto& row = model.rows[cell];
    const double u = uniform01(rng);
    double acc = 0.0;
    std::uint32_t next = row.back().first;
    for (const auto& [to, p] : row) {
      acc += p;
      if (u < acc) {
        next = to;
        break;
      }
    }
    cell = next;
    tr.samples.push_back(model.center(cell));
  }
  return tr;
}

}  // namespace beamsense
