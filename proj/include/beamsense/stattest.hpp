#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "beamsense/channel.hpp"
#include "beamsense/features.hpp"

namespace beamsense {

enum class MWMethod { exact, normal_approximation };

struct MWResult {
  double u_statistic = 0.0;  // U for sample x
  double p_value = 1.0;      // two-sided
  MWMethod method = MWMethod::exact;
};

// Two-sided Mann-Whitney U test. Exact null distribution when n*m <= 400 and
// there are no ties; otherwise normal approximation with tie correction and
// continuity correction.
MWResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y);

// Number of rank assignments giving each U in [0, n*m] under the null.
std::vector<std::uint64_t> mw_null_counts(std::size_t n, std::size_t m);

struct LabeledSample {
  std::string label;
  std::vector<double> values;
};

struct PValueMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> p;  // symmetric
};

// Pairwise p-values over n_series seeded subsamples per group. The diagonal
// compares two disjoint halves of the group's own subsample.
PValueMatrix pairwise_slope_matrix(const std::vector<LabeledSample>& groups, std::size_t n_series,
                                   std::uint64_t seed);

// Same, computing slopes of each trace over `window` first.
struct LabeledTraces {
  std::string label;
  std::vector<PowerTrace> traces;
};
PValueMatrix pairwise_slope_matrix(const std::vector<LabeledTraces>& groups, const WindowSpec& window,
                                   std::size_t n_series, std::uint64_t seed);

void write_matrix_csv(const std::string& path, const PValueMatrix& m);

}  // namespace beamsense
