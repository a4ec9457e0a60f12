#include "zdp/errors.hpp"

namespace zdp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoTouchdown: return "NoTouchdown";
    case ErrorCode::kLeanOutOfCone: return "LeanOutOfCone";
    case ErrorCode::kLegSingular: return "LegSingular";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kSingularJacobian: return "SingularJacobian";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kDivergedRollout: return "DivergedRollout";
    case ErrorCode::kInfeasibleInit: return "InfeasibleInit";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kNoProgress: return "NoProgress";
    case ErrorCode::kRolloutDiverged: return "RolloutDiverged";
    case ErrorCode::kNonPositive: return "NonPositive";
    case ErrorCode::kConstraintActive: return "ConstraintActive";
    case ErrorCode::kTrainingAborted: return "TrainingAborted";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace zdp
