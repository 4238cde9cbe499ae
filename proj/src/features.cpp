#include "beamsense/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "beamsense/error.hpp"

namespace beamsense {

void validate(const WindowSpec& w) {
  BEAMSENSE_REQUIRE(std::isfinite(w.start_ms) && std::isfinite(w.end_ms), "window bounds must be finite");
  BEAMSENSE_REQUIRE(w.start_ms >= 0.0 && w.start_ms < w.end_ms, "window needs 0 <= start < end");
}

SampleRange window_range(const PowerTrace& trace, const WindowSpec& w, std::size_t min_samples) {
  validate(w);
  BEAMSENSE_REQUIRE(trace.dt_ms > 0.0, "trace dt must be > 0");
  BEAMSENSE_REQUIRE(!trace.samples.empty(), "trace is empty");
  const double eps = 1e-9;
  const auto first = static_cast<std::size_t>(std::ceil(w.start_ms / trace.dt_ms - eps));
  auto last_f = std::floor(w.end_ms / trace.dt_ms + eps);
  const std::size_t last = std::min(static_cast<std::size_t>(last_f), trace.samples.size() - 1);
  BEAMSENSE_REQUIRE(first <= last && last - first + 1 >= min_samples,
                    "window holds fewer than " + std::to_string(min_samples) + " samples");
  return {first, last};
}

const std::array<const char*, FeatureVector::kCount>& FeatureVector::names() {
  static const std::array<const char*, kCount> n{"slope", "mean", "variance", "v100", "stft_sum", "lag1"};
  return n;
}

std::vector<double> ewma(const std::vector<double>& x, double gamma) {
  BEAMSENSE_REQUIRE(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  std::vector<double> s(x.size());
  if (x.empty()) return s;
  s[0] = x[0];
  for (std::size_t k = 1; k < x.size(); ++k) s[k] = gamma * x[k] + (1.0 - gamma) * s[k - 1];
  return s;
}

PowerTrace ewma(const PowerTrace& trace, double gamma) {
  PowerTrace out = trace;
  out.samples = ewma(trace.samples, gamma);
  return out;
}

double lsf_slope(const double* t, const double* x, std::size_t n) {
  BEAMSENSE_REQUIRE(n >= 2, "slope needs at least 2 samples");
  double tm = 0.0, xm = 0.0;
  for (std::size_t i = 0; i < n; ++i) tm += t[i], xm += x[i];
  tm /= n;
  xm /= n;
  double sxx = 0.0, sxy = 0.0;
  bool constant = true;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = t[i] - tm;
    sxx += dt * dt;
    sxy += dt * (x[i] - xm);
    constant = constant && x[i] == x[0];
  }
  BEAMSENSE_REQUIRE(sxx > 0.0, "slope window has zero time variance");
  return constant ? 0.0 : sxy / sxx;
}

double lsf_slope(const PowerTrace& trace, const WindowSpec& window) {
  const auto r = window_range(trace, window, 2);
  std::vector<double> t(r.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = trace.time_at(r.first + i);
  return lsf_slope(t.data(), trace.samples.data() + r.first, r.size());
}

double stft_sum(const PowerTrace& trace, const WindowSpec& window, const StftParams& params) {
  BEAMSENSE_REQUIRE(params.fft_len >= 1, "fft_len must be >= 1");
  BEAMSENSE_REQUIRE(params.hop >= 1, "hop must be >= 1");
  const std::size_t W = static_cast<std::size_t>(params.fft_len);
  const std::size_t L = W + 1;
  const auto r = window_range(trace, window, L);

  std::vector<double> w(L, 1.0);
  if (params.taper == TaperWindow::hann)
    for (std::size_t n = 0; n < L; ++n) w[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / W);
  // twiddle[j] = exp(-2 pi i j / L); index k*n mod L.
  std::vector<double> tc(L), ts(L);
  for (std::size_t j = 0; j < L; ++j) {
    tc[j] = std::cos(2.0 * M_PI * j / L);
    ts[j] = -std::sin(2.0 * M_PI * j / L);
  }
  std::vector<double> frame(L);
  double total = 0.0;
  for (std::size_t s = r.first; s + W <= r.last; s += params.hop) {
    for (std::size_t n = 0; n < L; ++n) frame[n] = trace.samples[s + n] * w[n];
    for (std::size_t k = 0; k < L; ++k) {
      double re = 0.0, im = 0.0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < L; ++n) {
        re += frame[n] * tc[idx];
        im += frame[n] * ts[idx];
        idx += k;
        if (idx >= L) idx -= L;
      }
      total += std::hypot(re, im);
    }
  }
  return total;
}

double lag1_autocorr(const double* x, std::size_t n, bool* undefined) {
  BEAMSENSE_REQUIRE(n >= 2, "lag-1 autocorrelation needs at least 2 samples");
  bool constant = true;
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m += x[i];
    constant = constant && x[i] == x[0];
  }
  if (undefined) *undefined = constant;
  if (constant) return 0.0;
  m /= n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - m;
    den += d * d;
    if (i + 1 < n) num += d * (x[i + 1] - m);
  }
  return num / den;
}

FeatureVector extract_features(const PowerTrace& trace, const WindowSpec& window, const StftParams& params) {
  const auto r = window_range(trace, window, 3);
  BEAMSENSE_REQUIRE(window.start_ms <= 100.0 && window.end_ms >= 100.0, "feature window must cover t = 100 ms");
  const double* x = trace.samples.data() + r.first;
  const std::size_t n = r.size();
  FeatureVector f;
  f.slope = lsf_slope(trace, window);
  bool constant = true;
  for (std::size_t i = 0; i < n; ++i) {
    f.mean += x[i];
    constant = constant && x[i] == x[0];
  }
  f.mean /= n;
  if (constant) {
    f.mean = x[0];
  } else {
    for (std::size_t i = 0; i < n; ++i) f.variance += (x[i] - f.mean) * (x[i] - f.mean);
    f.variance /= n;
  }
  const auto k100 = static_cast<std::size_t>(std::llround(100.0 / trace.dt_ms));
  BEAMSENSE_REQUIRE(k100 < trace.samples.size(), "trace ends before t = 100 ms");
  f.v100 = trace.samples[k100];
  f.stft_sum = stft_sum(trace, window, params);
  f.lag1 = lag1_autocorr(x, n, &f.lag1_undefined);
  return f;
}

EnsembleStats ensemble_stats(const std::vector<PowerTrace>& traces, const std::vector<double>& t_grid) {
  BEAMSENSE_REQUIRE(!traces.empty(), "ensemble_stats needs at least one trace");
  const double dt = traces.front().dt_ms;
  for (const auto& tr : traces) {
    BEAMSENSE_REQUIRE(tr.dt_ms == dt, "ensemble traces have mixed dt");
    BEAMSENSE_REQUIRE(!tr.samples.empty(), "empty trace in ensemble");
  }
  EnsembleStats out;
  for (double t : t_grid) {
    BEAMSENSE_REQUIRE(t >= 0.0, "negative time in grid");
    const auto k = static_cast<std::size_t>(std::llround(t / dt));
    double m = 0.0;
    for (const auto& tr : traces) {
      BEAMSENSE_REQUIRE(k < tr.samples.size(), "time grid beyond trace duration");
      m += tr.samples[k];
    }
    m /= traces.size();
    double v = 0.0;
    for (const auto& tr : traces) v += (tr.samples[k] - m) * (tr.samples[k] - m);
    out.t_ms.push_back(t);
    out.mean.push_back(m);
    out.std.push_back(std::sqrt(v / traces.size()));
  }
  return out;
}

FallDetector::FallDetector(std::vector<double> thresholds_db, double gamma, double dt_ms)
    : thresholds_(std::move(thresholds_db)), gamma_(gamma), dt_ms_(dt_ms), remaining_(thresholds_.size()) {
  BEAMSENSE_REQUIRE(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  BEAMSENSE_REQUIRE(dt_ms > 0.0, "dt must be > 0");
  for (double th : thresholds_) BEAMSENSE_REQUIRE(th > 0.0, "threshold must be > 0 dB");
  crossed_.assign(thresholds_.size(), std::nullopt);
}

bool FallDetector::push(double x) {
  if (k_ == 0) {
    s0_ = s_ = x;
  } else {
    s_ = gamma_ * x + (1.0 - gamma_) * s_;
  }
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    if (!crossed_[i] && s_ <= s0_ - thresholds_[i]) {
      crossed_[i] = static_cast<double>(k_) * dt_ms_;
      --remaining_;
    }
  }
  ++k_;
  return remaining_ == 0;
}

std::optional<double> time_to_fall(const PowerTrace& trace, double threshold_db, double gamma) {
  BEAMSENSE_REQUIRE(!trace.samples.empty(), "trace is empty");
  FallDetector det({threshold_db}, gamma, trace.dt_ms);
  for (double x : trace.samples)
    if (det.push(x)) break;
  return det.crossings()[0];
}

std::optional<double> FallTimeRow::quantile(double x, QuantileMode mode) const {
  BEAMSENSE_REQUIRE(x > 0.0 && x < 1.0, "quantile level must be in (0, 1)");
  if (n_traces == 0 || times.empty()) return std::nullopt;
  const double n = static_cast<double>(n_traces);
  if (mode == QuantileMode::cdf) {
    const auto rank = static_cast<std::size_t>(std::ceil(x * n - 1e-12));
    if (rank == 0) return times.front();
    if (rank > times.size()) return std::nullopt;
    return times[rank - 1];
  }
  // survival(T_i) = (#traces falling strictly after T_i) / n, non-crossers survive.
  auto survival_after = [&](std::size_t i) {
    const auto later = static_cast<std::size_t>(times.end() - std::upper_bound(times.begin(), times.end(), times[i]));
    return (static_cast<double>(later) + static_cast<double>(n_traces - n_crossed)) / n;
  };
  if (survival_after(times.size() - 1) >= x) return std::nullopt;
  std::optional<double> best;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (survival_after(i) >= x) best = times[i];
  return best ? best : std::optional<double>(times.front());
}

const FallTimeRow* FallTimeSummary::row(double threshold_db) const {
  for (const auto& r : rows)
    if (std::abs(r.threshold_db - threshold_db) < 1e-9) return &r;
  return nullptr;
}

FallTimeRow fall_time_row(const std::vector<std::optional<double>>& crossings, double threshold_db, double horizon_ms) {
  FallTimeRow row;
  row.threshold_db = threshold_db;
  row.horizon_ms = horizon_ms;
  row.n_traces = crossings.size();
  double censored_sum = 0.0;
  for (const auto& c : crossings) {
    if (c) row.times.push_back(*c);
    censored_sum += c ? std::min(*c, horizon_ms) : horizon_ms;
  }
  std::sort(row.times.begin(), row.times.end());
  row.n_crossed = row.times.size();
  row.crossing_fraction = row.n_traces ? static_cast<double>(row.n_crossed) / row.n_traces : 0.0;
  row.restricted_mean = row.n_traces ? censored_sum / row.n_traces : 0.0;
  if (!row.times.empty()) {
    row.min = row.times.front();
    if (row.n_crossed == row.n_traces) {
      double s = 0.0;
      for (double t : row.times) s += t;
      row.mean = s / row.times.size();
      row.max = row.times.back();
    }
  }
  return row;
}

FallTimeSummary fall_time_summary(const std::vector<PowerTrace>& traces, const std::vector<double>& thresholds_db,
                                  double gamma, std::string label) {
  BEAMSENSE_REQUIRE(!thresholds_db.empty(), "at least one threshold is required");
  std::vector<std::vector<std::optional<double>>> per(thresholds_db.size());
  double horizon = 0.0;
  for (const auto& tr : traces) {
    FallDetector det(thresholds_db, gamma, tr.dt_ms);
    for (double x : tr.samples)
      if (det.push(x)) break;
    for (std::size_t i = 0; i < thresholds_db.size(); ++i) per[i].push_back(det.crossings()[i]);
    horizon = std::max(horizon, tr.duration_ms());
  }
  FallTimeSummary s;
  s.label = std::move(label);
  for (std::size_t i = 0; i < thresholds_db.size(); ++i) s.rows.push_back(fall_time_row(per[i], thresholds_db[i], horizon));
  return s;
}

}  // namespace beamsense
