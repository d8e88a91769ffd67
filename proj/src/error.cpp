#include "bcihand/error.hpp"

namespace bcihand {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::SignalTooShort: return "SignalTooShort";
    case ErrorKind::InvalidFilterSpec: return "InvalidFilterSpec";
    case ErrorKind::EpochOutOfBounds: return "EpochOutOfBounds";
    case ErrorKind::AllTrialsRejected: return "AllTrialsRejected";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::IcaDiverged: return "IcaDiverged";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::InsufficientTrials: return "InsufficientTrials";
    case ErrorKind::ZeroReference: return "ZeroReference";
    case ErrorKind::TooFewComponents: return "TooFewComponents";
    case ErrorKind::WindowOutOfBounds: return "WindowOutOfBounds";
    case ErrorKind::MissingClass: return "MissingClass";
    case ErrorKind::SingularCovariance: return "SingularCovariance";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::InvalidSynthConfig: return "InvalidSynthConfig";
    case ErrorKind::MissingDependency: return "MissingDependency";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

} // namespace bcihand
