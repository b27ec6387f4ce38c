#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace etm {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kUnsupported,
  kNonConvergence,
  kNumericalFailure,
  kIo,
  kConfig,
  kMissingArtifact,
  kStaleArtifact,
};

/// Stable kebab-case name used in the CLI's machine-readable error line.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace etm
