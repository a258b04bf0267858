#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loopdyn {

enum class ErrorCode {
  ConfigInvalid,
  MissingRole,
  GeneratorFailure,
  SpecInvalid,
  PayloadMalformed,
  KindInapplicable,
  EmbedderFailure,
  RankDeficient,
  DegenerateInput,
  DimMismatch,
  JointFitViolation,
  TooShort,
  ZeroInitialDispersion,
  RankZero,
  BadCount,
  Empty,
  TooFewFamilies,
  ZeroVariance,
  SingleClass,
  AllSingleton,
  SourceRuleViolation,
  EmptyAfterTokenization,
  PartitionMissingLabels,
  RowMismatch,
  MissingDose,
  NoKickedUnits,
  HorizonExceedsTrajectory,
  TooFewDoses,
  AllZero,
  Unreachable,
  NoNullAvailable,
  TooFewEmbedders,
  AllMissing,
  BadParams,
  TooFewPoints,
  SchemaMismatch,
  MissingEndpoints,
  GuardRail,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure surfaced by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace loopdyn
