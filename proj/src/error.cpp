#include "loopdyn/error.hpp"

namespace loopdyn {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingRole: return "MissingRole";
    case ErrorCode::GeneratorFailure: return "GeneratorFailure";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::PayloadMalformed: return "PayloadMalformed";
    case ErrorCode::KindInapplicable: return "KindInapplicable";
    case ErrorCode::EmbedderFailure: return "EmbedderFailure";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::JointFitViolation: return "JointFitViolation";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::ZeroInitialDispersion: return "ZeroInitialDispersion";
    case ErrorCode::RankZero: return "RankZero";
    case ErrorCode::BadCount: return "BadCount";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::TooFewFamilies: return "TooFewFamilies";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::AllSingleton: return "AllSingleton";
    case ErrorCode::SourceRuleViolation: return "SourceRuleViolation";
    case ErrorCode::EmptyAfterTokenization: return "EmptyAfterTokenization";
    case ErrorCode::PartitionMissingLabels: return "PartitionMissingLabels";
    case ErrorCode::RowMismatch: return "RowMismatch";
    case ErrorCode::MissingDose: return "MissingDose";
    case ErrorCode::NoKickedUnits: return "NoKickedUnits";
    case ErrorCode::HorizonExceedsTrajectory: return "HorizonExceedsTrajectory";
    case ErrorCode::TooFewDoses: return "TooFewDoses";
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::NoNullAvailable: return "NoNullAvailable";
    case ErrorCode::TooFewEmbedders: return "TooFewEmbedders";
    case ErrorCode::AllMissing: return "AllMissing";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::MissingEndpoints: return "MissingEndpoints";
    case ErrorCode::GuardRail: return "GuardRail";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace loopdyn
