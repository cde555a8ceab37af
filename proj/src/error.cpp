#include "stackpred/error.hpp"

namespace stackpred {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TooFewTailSamples: return "TooFewTailSamples";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::AllNegInfinity: return "AllNegInfinity";
    case ErrorCode::TooManyModels: return "TooManyModels";
    case ErrorCode::IndexError: return "IndexError";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::AllInvalid: return "AllInvalid";
    case ErrorCode::ExcessiveClipping: return "ExcessiveClipping";
    case ErrorCode::TooManyShards: return "TooManyShards";
    case ErrorCode::EmptyShard: return "EmptyShard";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  return code == ErrorCode::AllInvalid || code == ErrorCode::ExcessiveClipping ||
         code == ErrorCode::AllNegInfinity;
}

}  // namespace stackpred
