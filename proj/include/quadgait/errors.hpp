#pragma once

#include <stdexcept>
#include <string>

namespace quadgait {

/// Bad user input: malformed config files, invalid parameter values.
class ConfigError : public std::invalid_argument {
public:
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Base for failures of the numerical machinery (integration, solving,
/// continuation). Distinct from ConfigError so callers can map the two
/// classes to different exit codes.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// State or geometry outside the model's domain of validity
/// (leg horizontal in stance, over-compressed spring, body underground).
class GeometryError : public NumericalError {
public:
  explicit GeometryError(const std::string& msg) : NumericalError(msg) {}
};

/// Hybrid-event bookkeeping violated (foot moving upward at touch-down,
/// inconsistent event schedule).
class EventError : public NumericalError {
public:
  explicit EventError(const std::string& msg) : NumericalError(msg) {}
};

/// Step-size underflow or tolerance failure inside the integrator.
class IntegrationError : public NumericalError {
public:
  explicit IntegrationError(const std::string& msg) : NumericalError(msg) {}
};

/// Newton / continuation corrector failed to converge.
class ConvergenceError : public NumericalError {
public:
  explicit ConvergenceError(const std::string& msg) : NumericalError(msg) {}
};

}  // namespace quadgait
