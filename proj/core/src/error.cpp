#include "etm/error.hpp"

namespace etm {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kNonConvergence: return "non-convergence";
    case ErrorCode::kNumericalFailure: return "numerical-failure";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kMissingArtifact: return "missing-artifact";
    case ErrorCode::kStaleArtifact: return "stale-artifact";
  }
  return "unknown";
}

}  // namespace etm
