#pragma once

#include <stdexcept>
#include <string>

namespace modalfuse {

enum class ErrorKind {
  kDimension,            // shape or feature-dimension disagreement
  kInvalidArgument,      // bad value, unknown tag, malformed config
  kNumeric,              // NaN/Inf produced by a forward operation
  kState,                // API misuse such as a second backward pass
  kIo,                   // file could not be opened, read or written
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kShapeInconsistency,   // file content disagrees with its own header/config
  kInvariantViolation,   // file content breaks a domain invariant
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace modalfuse
