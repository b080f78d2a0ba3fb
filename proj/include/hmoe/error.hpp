#pragma once

#include <stdexcept>
#include <string>

namespace hmoe {

/// Shape or index mismatch between inputs.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (optimizer constants, experiment grid, ...).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A loss, gradient or family member evaluated to a non-finite value.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace hmoe
