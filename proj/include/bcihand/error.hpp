#pragma once

#include <stdexcept>
#include <string>

namespace bcihand {

// Every failure the library reports carries one of these kinds. The CLI maps
// kinds onto process exit codes (see pipeline.hpp).
enum class ErrorKind {
  InvalidArgument,
  SignalTooShort,
  InvalidFilterSpec,
  EpochOutOfBounds,
  AllTrialsRejected,
  RankDeficient,
  IcaDiverged,
  DimensionMismatch,
  SingularMatrix,
  InsufficientTrials,
  ZeroReference,
  TooFewComponents,
  WindowOutOfBounds,
  MissingClass,
  SingularCovariance,
  TrainingDiverged,
  EmptyClass,
  InvalidSynthConfig,
  MissingDependency,
  ConfigError,
  EmptyInput,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

} // namespace bcihand
