#include "beamsense/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "beamsense/error.hpp"

namespace beamsense {

void validate(const GainModel& m) {
  BEAMSENSE_REQUIRE(std::isfinite(m.hpbw_deg) && m.hpbw_deg > 0.0, "hpbw must be > 0");
  BEAMSENSE_REQUIRE(std::isfinite(m.loss_floor_db) && m.loss_floor_db > 3.0, "loss_floor must be > 3 dB");
  BEAMSENSE_REQUIRE(std::isfinite(m.p0_db), "p0 must be finite");
  BEAMSENSE_REQUIRE(std::isfinite(m.noise_sigma_db) && m.noise_sigma_db >= 0.0, "noise_sigma must be >= 0");
}

double misalignment_loss(const GainModel& model, const AngularOffset& offset) {
  const double r2 = offset.x * offset.x + offset.y * offset.y;
  return std::min(model.loss_floor_db, 12.0 * r2 / (model.hpbw_deg * model.hpbw_deg));
}

PowerTrace to_power_trace(const BeamCenterTrace& trace, const GainModel& model, std::uint64_t seed) {
  validate(model);
  BEAMSENSE_REQUIRE(!trace.samples.empty(), "beam trace is empty");
  BEAMSENSE_REQUIRE(trace.dt_ms > 0.0, "beam trace dt must be > 0");
  PowerTrace out;
  out.dt_ms = trace.dt_ms;
  out.app_id = trace.app_id;
  out.samples.reserve(trace.samples.size());
  NoiseStream noise(model, seed);
  for (const auto& a : trace.samples) out.samples.push_back(noise.power(a));
  return out;
}

void write_power_csv(const std::string& path, const PowerTrace& trace) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "t_ms,p_db\n" << std::setprecision(17);
  for (std::size_t i = 0; i < trace.samples.size(); ++i) f << trace.time_at(i) << ',' << trace.samples[i] << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

PowerTrace read_power_csv(const std::string& path, std::string app_id) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "t_ms,p_db") throw ValidationError(path + ": bad header '" + line + "'");
  PowerTrace tr;
  tr.app_id = std::move(app_id);
  std::vector<double> ts;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    double t, p;
    char c;
    if (!(is >> t >> c >> p) || c != ',') throw ValidationError(path + ": bad row '" + line + "'");
    ts.push_back(t);
    tr.samples.push_back(p);
  }
  BEAMSENSE_REQUIRE(!tr.samples.empty(), path + ": no samples");
  tr.dt_ms = ts.size() > 1 ? ts[1] - ts[0] : 1.0;
  return tr;
}

}  // namespace beamsense
