#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace zdp {

enum class ErrorCode {
  kNoTouchdown,
  kLeanOutOfCone,
  kLegSingular,
  kRankDeficient,
  kSingularJacobian,
  kNoConvergence,
  kDivergedRollout,
  kInfeasibleInit,
  kNotConverged,
  kSchemaMismatch,
  kCorruptFile,
  kNoProgress,
  kRolloutDiverged,
  kNonPositive,
  kConstraintActive,
  kTrainingAborted,
  kInvalidArgument,
  kConfig,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (tests, the CLI) can dispatch on the kind without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace zdp
