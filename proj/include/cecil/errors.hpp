#pragma once

#include <stdexcept>
#include <string>

namespace cecil {

/// Inconsistent dimensions, invalid plans, unknown config keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values appearing in a forward pass, a loss or an optimizer step.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. calling backward on a tape that recorded nothing.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace cecil
