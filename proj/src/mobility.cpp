#include "beamsense/mobility.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "beamsense/error.hpp"

namespace beamsense {

namespace {

int sgn(double v) { return (v > 0.0) - (v < 0.0); }

void validate_curve(const Curve& c, const std::string& what, double lo, double hi) {
  BEAMSENSE_REQUIRE(!c.knots.empty(), what + ": curve has no knots");
  for (std::size_t i = 0; i < c.knots.size(); ++i) {
    const auto& [d, v] = c.knots[i];
    BEAMSENSE_REQUIRE(std::isfinite(d) && std::isfinite(v), what + ": non-finite knot");
    BEAMSENSE_REQUIRE(v >= lo && v <= hi, what + ": value out of range");
    if (i > 0) BEAMSENSE_REQUIRE(d > c.knots[i - 1].first, what + ": knots must be strictly increasing");
  }
}

std::size_t sample_count(double duration_ms, double dt_ms) {
  BEAMSENSE_REQUIRE(std::isfinite(dt_ms) && dt_ms > 0.0, "dt must be > 0");
  BEAMSENSE_REQUIRE(std::isfinite(duration_ms) && duration_ms >= dt_ms, "duration must be >= dt");
  // Small epsilon so 1000/0.1 does not lose a sample to rounding.
  return static_cast<std::size_t>(std::floor(duration_ms / dt_ms + 1e-9)) + 1;
}

}  // namespace

std::string_view to_string(AppClass c) { return c == AppClass::fast ? "fast" : "slow"; }

AppClass class_for_app(std::string_view name) {
  return (name == "vr" || name == "racing") ? AppClass::fast : AppClass::slow;
}

double Curve::at(double d) const {
  if (d <= knots.front().first) return knots.front().second;
  if (d >= knots.back().first) return knots.back().second;
  auto it = std::upper_bound(knots.begin(), knots.end(), d,
                             [](double v, const std::pair<double, double>& k) { return v < k.first; });
  const auto& [d1, v1] = *it;
  const auto& [d0, v0] = *(it - 1);
  return v0 + (v1 - v0) * (d - d0) / (d1 - d0);
}

double Curve::min_value() const {
  double m = knots.front().second;
  for (const auto& k : knots) m = std::min(m, k.second);
  return m;
}

double Curve::max_value() const {
  double m = knots.front().second;
  for (const auto& k : knots) m = std::max(m, k.second);
  return m;
}

void validate(const ApplicationProfile& p) {
  BEAMSENSE_REQUIRE(!p.name.empty(), "profile name is empty");
  const double inf = std::numeric_limits<double>::infinity();
  validate_curve(p.speed, p.name + " speed", 0.0, inf);
  validate_curve(p.x_speed, p.name + " x_speed", 0.0, inf);
  validate_curve(p.y_speed, p.name + " y_speed", 0.0, inf);
  validate_curve(p.drift, p.name + " drift", 0.0, 1.0);
  validate_curve(p.x_drift, p.name + " x_drift", 0.0, 1.0);
  validate_curve(p.y_drift, p.name + " y_drift", 0.0, 1.0);
  BEAMSENSE_REQUIRE(std::isfinite(p.axis_corr) && p.axis_corr >= -1.0 && p.axis_corr <= 1.0,
                    p.name + ": axis_corr outside [-1, 1]");
  BEAMSENSE_REQUIRE(std::isfinite(p.plane_to_angle) && p.plane_to_angle > 0.0, p.name + ": plane_to_angle must be > 0");
  if (p.name == "video" || p.name == "call" || p.name == "vr" || p.name == "racing")
    BEAMSENSE_REQUIRE(p.class_label == class_for_app(p.name), p.name + ": class label does not match application");
}

void validate(const WalkOptions& o) {
  BEAMSENSE_REQUIRE(std::isfinite(o.fov_half_deg) && o.fov_half_deg > 0.0, "fov_half_deg must be > 0");
  BEAMSENSE_REQUIRE(o.redraw_ms >= 0.0, "redraw_ms must be >= 0");
  BEAMSENSE_REQUIRE(o.geometry_spread >= 0.0 && o.geometry_spread <= 5.0, "geometry_spread must be in [0, 5]");
  BEAMSENSE_REQUIRE(o.restart_flat_ms >= 0.0, "restart_flat_ms must be >= 0");
  if (o.start) {
    BEAMSENSE_REQUIRE(std::abs(o.start->x) <= o.fov_half_deg && std::abs(o.start->y) <= o.fov_half_deg,
                      "start offset outside field of view");
  }
}

ApplicationProfile table_profile(std::string_view name, double span_m) {
  BEAMSENSE_REQUIRE(span_m > 0.0, "curve span must be > 0");
  auto lin = [span_m](double a, double b) { return Curve::linear(a, b, span_m); };
  ApplicationProfile p;
  p.name = std::string(name);
  p.class_label = class_for_app(name);
  if (name == "video") {
    p.speed = lin(3, 10), p.drift = lin(0.17, 0.11), p.axis_corr = 0.0;
    p.x_speed = lin(1, 6), p.y_speed = lin(2, 8), p.x_drift = lin(0.17, 0.05), p.y_drift = lin(0.17, 0.21);
  } else if (name == "call") {
    p.speed = lin(7, 7), p.drift = lin(0.17, 0.30), p.axis_corr = -0.2;
    p.x_speed = lin(3, 6), p.y_speed = lin(3, 5), p.x_drift = lin(0.17, 0.13), p.y_drift = lin(0.17, 0.25);
  } else if (name == "vr") {
    p.speed = lin(9, 13), p.drift = lin(0.17, 0.17), p.axis_corr = 0.0;
    p.x_speed = lin(6, 9), p.y_speed = lin(5, 8), p.x_drift = lin(0.17, 0.17), p.y_drift = lin(0.17, 0.17);
  } else if (name == "racing") {
    p.speed = lin(9, 5), p.drift = lin(0.17, 0.17), p.axis_corr = -0.4;
    p.x_speed = lin(7, 4), p.y_speed = lin(3, 2), p.x_drift = lin(0.13, 0.21), p.y_drift = lin(0.19, 0.14);
  } else {
    throw ValidationError("unknown application '" + std::string(name) + "'");
  }
  return p;
}

std::vector<ApplicationProfile> default_profiles(double span_m) {
  std::vector<ApplicationProfile> out;
  for (const auto& n : app_names()) out.push_back(table_profile(n, span_m));
  return out;
}

// ---------------------------------------------------------------- Walker

Walker::Walker(const ApplicationProfile& profile, double dt_ms, const WalkOptions& opts, std::uint64_t seed,
               WalkMode mode)
    : profile_(profile), dt_ms_(dt_ms), opts_(opts), mode_(mode), rng_(seed) {
  validate(profile_);
  validate(opts_);
  BEAMSENSE_REQUIRE(std::isfinite(dt_ms) && dt_ms > 0.0, "dt must be > 0");
  const double a = opts_.geometry_spread;
  const double u = uniform01(rng_);
  // Log-uniform on [e^-a, e^a], rescaled to unit mean.
  const double mult = a > 0.0 ? std::exp(a * (2.0 * u - 1.0)) * a / std::sinh(a) : 1.0;
  k_eff_ = profile_.plane_to_angle * mult;
  redraw_p_ = opts_.redraw_ms > 0.0 ? std::min(1.0, dt_ms_ / opts_.redraw_ms) : 1.0;
  flat_steps_ = static_cast<std::uint64_t>(std::floor(opts_.restart_flat_ms / dt_ms_ + 1e-9));
  if (opts_.start) pos_ = *opts_.start;
}

int Walker::draw_direction(double pos, double u, double p_toward) const {
  if (pos == 0.0) {
    // At the origin "toward" means stay put.
    if (u < p_toward) return 0;
    return (u - p_toward) / (1.0 - p_toward) < 0.5 ? -1 : 1;
  }
  return u < p_toward ? -sgn(pos) : sgn(pos);
}

double Walker::reflect(double n) const {
  const double f = opts_.fov_half_deg;
  if (std::abs(n) > f) n = sgn(n) * (2.0 * f - std::abs(n));
  return std::clamp(n, -f, f);
}

double Walker::move(double pos, int& dir, double s) const {
  if (dir == 0 || s == 0.0) return pos;
  const double n = pos + dir * s;
  if (pos != 0.0 && dir == -sgn(pos) && sgn(n) != sgn(pos)) {
    dir = 0;
    return 0.0;
  }
  if (std::abs(n) > opts_.fov_half_deg) {
    dir = -dir;
    return reflect(n);
  }
  return n;
}

void Walker::step_joint() {
  const double r = std::hypot(pos_.x, pos_.y);
  const double d = r / k_eff_;
  const double v = profile_.speed.at(d);
  const double p = 0.5 + profile_.drift.at(d) / 2.0;
  const bool first = (t_ == flat_steps_ + 1);
  const bool redraw = uniform01(rng_) < redraw_p_ || first;
  if (redraw) {
    const double ux = uniform01(rng_), uy = uniform01(rng_), uc = uniform01(rng_);
    dx_ = draw_direction(pos_.x, ux, p);
    if (uc < std::abs(profile_.axis_corr))
      dy_ = sgn(profile_.axis_corr) * dx_;
    else
      dy_ = draw_direction(pos_.y, uy, p);
  } else {
    if (dx_ == 0) dx_ = draw_direction(pos_.x, uniform01(rng_), p);
    if (dy_ == 0) dy_ = draw_direction(pos_.y, uniform01(rng_), p);
  }
  const double s = v * k_eff_ * dt_ms_ / 1000.0 / std::sqrt(2.0);
  pos_.x = move(pos_.x, dx_, s);
  pos_.y = move(pos_.y, dy_, s);
}

void Walker::step_axis(double& pos, int& dir, const Curve& speed, const Curve& drift, double step_scale) {
  const double d = std::abs(pos) / k_eff_;
  const double p = 0.5 + drift.at(d) / 2.0;
  const bool first = (t_ == flat_steps_ + 1);
  const double u = uniform01(rng_);
  if (first || dir == 0 || u < redraw_p_) dir = draw_direction(pos, uniform01(rng_), p);
  pos = move(pos, dir, speed.at(d) * step_scale);
}

void Walker::step_brownian(double& pos, const Curve& speed) {
  const double v = speed.at(std::abs(pos) / k_eff_);
  // E|N(0, s^2)| = s * sqrt(2/pi); match it to the mean step length.
  const double sigma = v * k_eff_ * dt_ms_ / 1000.0 * std::sqrt(M_PI / 2.0);
  const double z = gauss_(rng_);
  if (sigma > 0.0) pos = reflect(pos + sigma * z);
}

const AngularOffset& Walker::step() {
  ++t_;
  if (t_ <= flat_steps_) return pos_;
  switch (mode_) {
    case WalkMode::joint:
      step_joint();
      break;
    case WalkMode::markov1d: {
      const double scale = k_eff_ * dt_ms_ / 1000.0;
      step_axis(pos_.x, dx_, profile_.x_speed, profile_.x_drift, scale);
      step_axis(pos_.y, dy_, profile_.y_speed, profile_.y_drift, scale);
      break;
    }
    case WalkMode::brownian:
      step_brownian(pos_.x, profile_.x_speed);
      step_brownian(pos_.y, profile_.y_speed);
      break;
  }
  return pos_;
}

namespace {

BeamCenterTrace run_walker(const ApplicationProfile& profile, double duration_ms, double dt_ms, std::uint64_t seed,
                           const WalkOptions& opts, WalkMode mode) {
  const std::size_t n = sample_count(duration_ms, dt_ms);
  Walker w(profile, dt_ms, opts, seed, mode);
  BeamCenterTrace tr;
  tr.dt_ms = dt_ms;
  tr.app_id = profile.name;
  tr.geometry_scale = w.geometry_scale();
  tr.samples.reserve(n);
  tr.samples.push_back(w.current());
  for (std::size_t i = 1; i < n; ++i) tr.samples.push_back(w.step());
  return tr;
}

}  // namespace

BeamCenterTrace synth_walk(const ApplicationProfile& profile, double duration_ms, double dt_ms, std::uint64_t seed,
                           const WalkOptions& opts) {
  return run_walker(profile, duration_ms, dt_ms, seed, opts, WalkMode::joint);
}

BeamCenterTrace sample_decomposed(const ApplicationProfile& profile, DecomposedMode mode, double duration_ms,
                                  double dt_ms, std::uint64_t seed, const WalkOptions& opts) {
  return run_walker(profile, duration_ms, dt_ms, seed, opts,
                    mode == DecomposedMode::markov1d ? WalkMode::markov1d : WalkMode::brownian);
}

// ---------------------------------------------------------------- CSV

void write_beam_csv(const std::string& path, const BeamCenterTrace& trace) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "t_ms,x_deg,y_deg\n" << std::setprecision(17);
  for (std::size_t i = 0; i < trace.samples.size(); ++i)
    f << static_cast<double>(i) * trace.dt_ms << ',' << trace.samples[i].x << ',' << trace.samples[i].y << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

BeamCenterTrace read_beam_csv(const std::string& path, std::string app_id) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "t_ms,x_deg,y_deg") throw ValidationError(path + ": bad header '" + line + "'");
  BeamCenterTrace tr;
  tr.app_id = std::move(app_id);
  std::vector<double> ts;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    double t, x, y;
    char c1, c2;
    if (!(is >> t >> c1 >> x >> c2 >> y) || c1 != ',' || c2 != ',') throw ValidationError(path + ": bad row '" + line + "'");
    ts.push_back(t);
    tr.samples.push_back({x, y});
  }
  BEAMSENSE_REQUIRE(!tr.samples.empty(), path + ": no samples");
  tr.dt_ms = ts.size() > 1 ? ts[1] - ts[0] : 1.0;
  return tr;
}

}  // namespace beamsense
