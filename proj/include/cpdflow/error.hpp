#pragma once

#include <stdexcept>
#include <string>

namespace cpdflow {

enum class ErrorCode {
  DimError,
  NotPSD,
  Diagnostics,
  EmptyClass,
  EmptyDataset,
  EmptyTrain,
  UnknownCondition,
  DomainError,
  StepLimitExceeded,
  NumericalError,
  IoError,
  ConfigError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Process exit status: numerical failures map to 2, everything else to 1.
  int exit_code() const noexcept {
    return (code_ == ErrorCode::NumericalError || code_ == ErrorCode::StepLimitExceeded ||
            code_ == ErrorCode::Diagnostics)
               ? 2
               : 1;
  }

 private:
  ErrorCode code_;
};

}  // namespace cpdflow
