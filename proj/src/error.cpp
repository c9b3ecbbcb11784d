#include "cpdflow/error.hpp"

namespace cpdflow {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimError: return "DimError";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::Diagnostics: return "Diagnostics";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyTrain: return "EmptyTrain";
    case ErrorCode::UnknownCondition: return "UnknownCondition";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::StepLimitExceeded: return "StepLimitExceeded";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Error";
}

}  // namespace cpdflow
