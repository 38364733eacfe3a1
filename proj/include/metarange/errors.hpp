#pragma once

#include <stdexcept>
#include <string>

namespace metarange {

/// Invalid argument values or shape mismatches at an API boundary.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A configuration that is internally consistent but unusable
/// (e.g. a class split too small for the requested way count).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data. Carries the 1-based line number when known.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg, long line = -1)
      : std::runtime_error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_number(line) {}
  long line_number;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SearchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace metarange
