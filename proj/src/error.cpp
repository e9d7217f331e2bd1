#include "modalfuse/error.hpp"

namespace modalfuse {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kNumeric: return "non-finite value";
    case ErrorKind::kState: return "invalid state";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kBadMagic: return "bad magic";
    case ErrorKind::kVersionMismatch: return "version mismatch";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kShapeInconsistency: return "shape inconsistency";
    case ErrorKind::kInvariantViolation: return "invariant violation";
  }
  return "unknown error";
}

}  // namespace modalfuse
