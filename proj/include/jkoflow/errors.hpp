#pragma once

#include <stdexcept>
#include <string>

namespace jko {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, schema violation, or bad argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergent training, or a degenerate statistic.
class NumericFault : public Error {
 public:
  using Error::Error;
};

/// File missing, unreadable, truncated, or failing an integrity check.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace jko
