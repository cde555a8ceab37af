#ifndef STACKPRED_ERROR_HPP
#define STACKPRED_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace stackpred {

enum class ErrorCode {
  InvalidInput,
  DimensionMismatch,
  TooFewTailSamples,
  DegenerateSample,
  AllNegInfinity,
  TooManyModels,
  IndexError,
  KTooLarge,
  GridMismatch,
  AllInvalid,
  ExcessiveClipping,
  TooManyShards,
  EmptyShard,
  ModelMismatch,
  KindMismatch,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// True for errors that stem from numerical breakdown rather than bad input.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace stackpred

#endif  // STACKPRED_ERROR_HPP
