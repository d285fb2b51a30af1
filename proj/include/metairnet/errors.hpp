#pragma once

#include <stdexcept>
#include <string>

namespace metairnet {

// Each error family maps onto one CLI exit code (see tools/metairnet.cpp).

/// Invalid or inconsistent configuration. Exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, malformed or insufficient data (images, cache entries, splits). Exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or failed numerical routines. Exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace metairnet
