#pragma once

#include <stdexcept>
#include <string>

namespace cardiomt {

/// Bad user input: invalid configuration values, unknown keys, bad flags.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or inconsistent data on disk or in memory.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cardiomt
