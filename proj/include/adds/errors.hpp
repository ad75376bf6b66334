#pragma once

#include <stdexcept>

namespace adds {

// Bad shapes, masks, or argument domains.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/inf encountered mid-computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid experiment configuration; the message names the offending key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Text/file parse failure; the message carries the line number.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace adds
