#pragma once
#include <stdexcept>
#include <string>

namespace beamsense {

// Bad argument or violated precondition.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Calibration residual above the configured bound.
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// PCA input has a column with zero variance.
struct ConstantColumnError : ValidationError {
  using ValidationError::ValidationError;
};

// Pipeline failure tagged with the stage that raised it.
struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error("stage '" + stage_name + "': " + what), stage(std::move(stage_name)) {}
  std::string stage;
};

#define BEAMSENSE_REQUIRE(cond, msg) \
  do {                               \
    if (!(cond)) throw ::beamsense::ValidationError(msg); \
  } while (0)

}  // namespace beamsense
