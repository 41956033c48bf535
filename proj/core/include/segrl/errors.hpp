#pragma once

#include <stdexcept>
#include <string>

namespace segrl {

// Invalid user-supplied configuration (bad task id, even kernel, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke a documented precondition (action out of range, sampling
// from an undersized buffer, reading attention without capture, ...).
struct ContractViolation : std::logic_error {
  explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite loss or similar fatal condition during optimization.
struct TrainingFault : std::runtime_error {
  explicit TrainingFault(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable, truncated or structurally incompatible checkpoint.
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace segrl
