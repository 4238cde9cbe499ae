#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "beamsense/mobility.hpp"
#include "beamsense/rng.hpp"

namespace beamsense {

struct GainModel {
  double hpbw_deg = 7.0;
  double loss_floor_db = 30.0;
  double p0_db = -14.8;
  double noise_sigma_db = 0.1;
};

void validate(const GainModel& m);

struct PowerTrace {
  std::vector<double> samples;  // dB
  double dt_ms = 1.0;
  std::string app_id;

  double time_at(std::size_t k) const { return static_cast<double>(k) * dt_ms; }
  double duration_ms() const { return samples.empty() ? 0.0 : time_at(samples.size() - 1); }
};

// Parabolic main-lobe loss in dB, clamped at the floor.
double misalignment_loss(const GainModel& model, const AngularOffset& offset);

// Per-sample received power with additive Gaussian noise drawn from `seed`.
class NoiseStream {
 public:
  NoiseStream(const GainModel& model, std::uint64_t seed) : model_(model), rng_(seed) {}
  double power(const AngularOffset& offset) {
    const double n = model_.noise_sigma_db > 0.0 ? model_.noise_sigma_db * gauss_(rng_) : 0.0;
    return model_.p0_db - misalignment_loss(model_, offset) + n;
  }

 private:
  GainModel model_;
  Rng rng_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

PowerTrace to_power_trace(const BeamCenterTrace& trace, const GainModel& model, std::uint64_t seed);

void write_power_csv(const std::string& path, const PowerTrace& trace);
PowerTrace read_power_csv(const std::string& path, std::string app_id = {});

}  // namespace beamsense
