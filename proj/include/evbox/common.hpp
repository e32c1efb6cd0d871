#pragma once

#include <stdexcept>
#include <string>

namespace evbox {

// Base class for everything user-facing; the CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };     // tensor/parameter shape mismatch
struct BoxError : Error { using Error::Error; };       // degenerate or invalid box
struct ContractError : Error { using Error::Error; };  // API misuse (e.g. non-scalar loss)
struct ConfigError : Error { using Error::Error; };    // bad configuration key or value
struct ParseError : Error { using Error::Error; };     // malformed text input (CSV, config)
struct FormatError : Error { using Error::Error; };    // malformed binary input (PPM, checkpoint)
struct VersionError : FormatError { using FormatError::FormatError; };
struct TruncationError : FormatError { using FormatError::FormatError; };
struct IoError : Error { using Error::Error; };

// Thrown by the training loop when the loss goes non-finite.
struct DivergenceError : Error {
  long iteration;
  DivergenceError(long iter, const std::string& msg) : Error(msg), iteration(iter) {}
};

}  // namespace evbox
