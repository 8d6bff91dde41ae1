#pragma once

#include <stdexcept>
#include <string>

namespace finr {

// Base for all engine errors. CLI maps subclasses to exit codes:
// ConfigError -> 2, CapabilityError -> 3, NumericError -> 4.
struct FinrError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mode extent / rank mismatches, malformed tensors, non-scalar losses.
struct ShapeError : FinrError {
  using FinrError::FinrError;
};

// Bad or unknown configuration keys and values.
struct ConfigError : FinrError {
  using FinrError::FinrError;
};

// A requested combination the engine refuses (e.g. feature-grid encoding
// where second input derivatives are required).
struct CapabilityError : FinrError {
  using FinrError::FinrError;
};

// Non-finite losses or gradients, failed numeric assertions at runtime.
struct NumericError : FinrError {
  using FinrError::FinrError;
};

// Unreadable or corrupt files (tensor container, checkpoints, images).
struct IoError : FinrError {
  using FinrError::FinrError;
};

// Query outside the model's configured axis domains.
struct DomainError : FinrError {
  using FinrError::FinrError;
};

}  // namespace finr
