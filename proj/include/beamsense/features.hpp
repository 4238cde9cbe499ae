#pragma once
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "beamsense/channel.hpp"

namespace beamsense {

// Inclusive time window [start_ms, end_ms].
struct WindowSpec {
  double start_ms = 0.0;
  double end_ms = 100.0;
};

void validate(const WindowSpec& w);

// Index range [first, last] of samples inside `w`; throws when fewer than `min_samples`.
struct SampleRange {
  std::size_t first = 0, last = 0;
  std::size_t size() const { return last - first + 1; }
};
SampleRange window_range(const PowerTrace& trace, const WindowSpec& w, std::size_t min_samples);

struct FeatureVector {
  double slope = 0.0;     // dB/ms
  double mean = 0.0;      // dB
  double variance = 0.0;  // dB^2, population
  double v100 = 0.0;      // dB at t = 100 ms
  double stft_sum = 0.0;
  double lag1 = 0.0;
  bool lag1_undefined = false;  // zero variance; lag1 reported as 0

  static constexpr std::size_t kCount = 6;
  static const std::array<const char*, kCount>& names();
  std::array<double, kCount> as_array() const { return {slope, mean, variance, v100, stft_sum, lag1}; }
};

// Smoothing factor used for crossing detection; the generic ewma default is 0.001.
inline constexpr double kDetectGamma = 0.1;
inline constexpr double kDisplayGamma = 0.001;

std::vector<double> ewma(const std::vector<double>& x, double gamma);
PowerTrace ewma(const PowerTrace& trace, double gamma = kDisplayGamma);

double lsf_slope(const PowerTrace& trace, const WindowSpec& window);
// Slope over raw (t, x) pairs; exposed for the per-interval tracker.
double lsf_slope(const double* t, const double* x, std::size_t n);

enum class TaperWindow { hann, rectangular };

struct StftParams {
  int fft_len = 32;  // W; frames hold W + 1 samples
  int hop = 16;
  TaperWindow taper = TaperWindow::hann;
};

double stft_sum(const PowerTrace& trace, const WindowSpec& window, const StftParams& params = {});

// Lag-1 autocorrelation; sets *undefined and returns 0 for constant input.
double lag1_autocorr(const double* x, std::size_t n, bool* undefined = nullptr);

FeatureVector extract_features(const PowerTrace& trace, const WindowSpec& window, const StftParams& params = {});

struct EnsembleStats {
  std::vector<double> t_ms, mean, std;
};

EnsembleStats ensemble_stats(const std::vector<PowerTrace>& traces, const std::vector<double>& t_grid);

// First time the smoothed trace sits `threshold_db` below its initial value.
std::optional<double> time_to_fall(const PowerTrace& trace, double threshold_db, double gamma = kDetectGamma);

// Incremental form of time_to_fall over several thresholds at once.
class FallDetector {
 public:
  FallDetector(std::vector<double> thresholds_db, double gamma, double dt_ms);
  // Feed the next raw sample; returns true once every threshold has been crossed.
  bool push(double x);
  const std::vector<std::optional<double>>& crossings() const { return crossed_; }
  bool done() const { return remaining_ == 0; }

 private:
  std::vector<double> thresholds_;
  double gamma_, dt_ms_;
  double s0_ = 0.0, s_ = 0.0;
  std::size_t k_ = 0, remaining_;
  std::vector<std::optional<double>> crossed_;
};

enum class QuantileMode { survival, cdf };

struct FallTimeRow {
  double threshold_db = 0.0;
  std::size_t n_traces = 0;
  std::size_t n_crossed = 0;
  double crossing_fraction = 0.0;
  std::optional<double> min, mean, max;  // mean/max absent unless every trace crosses
  double restricted_mean = 0.0;          // crossing time censored at the trace horizon
  double horizon_ms = 0.0;
  std::vector<double> times;             // sorted crossing times

  // Survival mode: largest crossing time T with #(fall > T)/n >= x, absent when
  // survival at the last crossing is still >= x. CDF mode: literal x-quantile.
  std::optional<double> quantile(double x, QuantileMode mode = QuantileMode::survival) const;
};

struct FallTimeSummary {
  std::string label;
  std::vector<FallTimeRow> rows;
  const FallTimeRow* row(double threshold_db) const;
};

FallTimeRow fall_time_row(const std::vector<std::optional<double>>& crossings, double threshold_db, double horizon_ms);
FallTimeSummary fall_time_summary(const std::vector<PowerTrace>& traces, const std::vector<double>& thresholds_db,
                                  double gamma = kDetectGamma, std::string label = {});

struct Pca2Result {
  std::vector<std::array<double, 2>> projection;  // one row per input row
  std::vector<std::array<double, 2>> components;  // one row per input column
  std::array<double, 2> explained_variance{};
  std::array<double, 2> explained_ratio{};
  std::vector<double> column_mean, column_std;
};

// Top-2 principal components of column-standardized rows.
Pca2Result pca2(const std::vector<std::vector<double>>& rows);

}  // namespace beamsense
