#pragma once

#include <stdexcept>
#include <string>

namespace cfdbench {

// Shape/dimension mismatch between tensors or grids.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (hyperparameter, mode count, solver setting).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API contract violation (wrong input style, non-scalar loss, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Requested operation is not supported by this component.
struct CapabilityError : std::runtime_error {
  explicit CapabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical blow-up during time stepping; carries the failing step.
struct SolverBlowupError : std::runtime_error {
  SolverBlowupError(const std::string& msg, int step)
      : std::runtime_error(msg + " (step " + std::to_string(step) + ")"), failing_step(step) {}
  int failing_step;
};

// Pressure iterations hit the cap without reaching the residual target.
struct IterationLimitError : std::runtime_error {
  IterationLimitError(const std::string& msg, double residual)
      : std::runtime_error(msg + " (final residual " + std::to_string(residual) + ")"),
        final_residual(residual) {}
  double final_residual;
};

// Container/file problems: schema mismatch, truncation, parse failure.
struct LoadError : std::runtime_error {
  explicit LoadError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyInputError : std::runtime_error {
  explicit EmptyInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cfdbench
