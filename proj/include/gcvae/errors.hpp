#pragma once

#include <stdexcept>
#include <string>

namespace gcvae {

/// Bad dimensions, parameters or configuration values. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, truncated or malformed files. Maps to CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of a special function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite values during optimisation. Maps to CLI exit code 3.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simulator blow-up (NaN or runaway magnitude). Maps to CLI exit code 3.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke an API precondition that is not a user configuration problem.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Metric requested on data where it is undefined (e.g. single-class labels).
class UndefinedMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gcvae
