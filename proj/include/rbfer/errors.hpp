#pragma once

#include <stdexcept>
#include <string>

namespace rbfer {

/// Invalid hyperparameter or run configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unreadable, malformed or inconsistent dataset/file input. CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss. CLI exit code 4.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rbfer
