#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "beamsense/rng.hpp"

namespace beamsense {

// Beam-center offset from perfect alignment, degrees.
struct AngularOffset {
  double x = 0.0;
  double y = 0.0;
};

struct BeamCenterTrace {
  std::vector<AngularOffset> samples;
  double dt_ms = 1.0;
  std::string app_id;
  // Effective degrees per capture-plane meter used to generate this trace
  // (plane_to_angle times the per-trace geometry factor). 0 when unknown.
  double geometry_scale = 0.0;
};

enum class AppClass { slow, fast };

std::string_view to_string(AppClass c);
AppClass class_for_app(std::string_view name);

// Piecewise-linear function of distance, clamped outside the knot range.
struct Curve {
  std::vector<std::pair<double, double>> knots;  // (distance_m, value), sorted by distance

  static Curve constant(double v) { return Curve{{{0.0, v}}}; }
  static Curve linear(double v0, double v1, double span_m) { return Curve{{{0.0, v0}, {span_m, v1}}}; }
  double at(double d) const;
  double min_value() const;
  double max_value() const;
};

struct ApplicationProfile {
  std::string name;
  AppClass class_label = AppClass::slow;
  Curve speed;        // m/s in the capture plane
  Curve drift;        // drift-to-origin strength in [0, 1]
  double axis_corr = 0.0;
  Curve x_speed, y_speed;  // per-axis rows, used by the decomposed models
  Curve x_drift, y_drift;
  double plane_to_angle = 1.0;  // deg per plane meter
};

// Throws ValidationError when a profile breaks its invariants.
void validate(const ApplicationProfile& p);

// Table of measured micromobility statistics; curve knots span `span_m` meters.
ApplicationProfile table_profile(std::string_view name, double span_m = 1.0);
std::vector<ApplicationProfile> default_profiles(double span_m = 1.0);
inline const std::vector<std::string>& app_names() {
  static const std::vector<std::string> names{"video", "call", "vr", "racing"};
  return names;
}

struct WalkOptions {
  double fov_half_deg = 20.0;
  double redraw_ms = 400.0;       // mean direction persistence
  double geometry_spread = 1.2;   // half-width of log-uniform geometry factor
  double restart_flat_ms = 0.0;   // initial motionless segment
  std::optional<AngularOffset> start;
};

void validate(const WalkOptions& o);

enum class WalkMode { joint, markov1d, brownian };

// Streaming generator. synth_walk / sample_decomposed are thin loops over it,
// so batch and streaming output agree sample for sample.
class Walker {
 public:
  Walker(const ApplicationProfile& profile, double dt_ms, const WalkOptions& opts, std::uint64_t seed,
         WalkMode mode = WalkMode::joint);
  const AngularOffset& current() const { return pos_; }
  double geometry_scale() const { return k_eff_; }
  const AngularOffset& step();

 private:
  void step_joint();
  void step_axis(double& pos, int& dir, const Curve& speed, const Curve& drift, double step_scale);
  void step_brownian(double& pos, const Curve& speed);
  double reflect(double pos) const;
  int draw_direction(double pos, double u, double p_toward) const;
  double move(double pos, int& dir, double delta) const;

  ApplicationProfile profile_;
  double dt_ms_;
  WalkOptions opts_;
  WalkMode mode_;
  Rng rng_;
  double k_eff_ = 1.0;
  double redraw_p_ = 1.0;
  std::uint64_t flat_steps_ = 0;
  std::uint64_t t_ = 0;
  AngularOffset pos_;
  int dx_ = 0, dy_ = 0;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

BeamCenterTrace synth_walk(const ApplicationProfile& profile, double duration_ms, double dt_ms, std::uint64_t seed,
                           const WalkOptions& opts = {});

enum class DecomposedMode { markov1d, brownian };
BeamCenterTrace sample_decomposed(const ApplicationProfile& profile, DecomposedMode mode, double duration_ms,
                                  double dt_ms, std::uint64_t seed, const WalkOptions& opts = {});

// ---- grid Markov chain ----

struct Bounds {
  double x_min = -20.0, x_max = 20.0;
  double y_min = -20.0, y_max = 20.0;
  bool contains(const AngularOffset& a) const {
    return a.x >= x_min && a.x <= x_max && a.y >= y_min && a.y <= y_max;
  }
};

// Row-stochastic chain over grid_n x grid_n cells. Rows are sparse because
// a fitted chain only has mass on observed transitions.
struct MarkovModel2D {
  int grid_n = 100;
  Bounds bounds;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;  // sorted by target cell
  std::uint32_t initial_cell = 0;

  std::uint32_t cell_count() const { return static_cast<std::uint32_t>(grid_n) * grid_n; }
  std::uint32_t cell_of(const AngularOffset& a) const;
  AngularOffset center(std::uint32_t cell) const;
  double prob(std::uint32_t from, std::uint32_t to) const;
};

void validate(const MarkovModel2D& m);
MarkovModel2D fit_markov2d(const std::vector<BeamCenterTrace>& traces, int grid_n, const Bounds& bounds = {});
BeamCenterTrace sample_markov2d(const MarkovModel2D& model, double duration_ms, double dt_ms, std::uint64_t seed);

// ---- CSV ----
void write_beam_csv(const std::string& path, const BeamCenterTrace& trace);
BeamCenterTrace read_beam_csv(const std::string& path, std::string app_id = {});

}  // namespace beamsense
