#pragma once

#include <stdexcept>
#include <string>

namespace msnas {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed architecture table / config / checkpoint text.
struct ParseError : Error {
  using Error::Error;
};

// Tensor shape or graph structure rejected at build time.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite value produced during forward/backward, or training divergence.
struct NumericError : Error {
  NumericError(const std::string& msg, long step = -1) : Error(msg), step_index(step) {}
  long step_index;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace msnas
