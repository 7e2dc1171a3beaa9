#include "speechlm/errors.hpp"

namespace speechlm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::no_speeches_found: return "no_speeches_found";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::invalid_schedule: return "invalid_schedule";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::non_finite_activation: return "non_finite_activation";
    case ErrorCode::non_finite_gradient: return "non_finite_gradient";
    case ErrorCode::stream_too_short: return "stream_too_short";
    case ErrorCode::empty_stream: return "empty_stream";
    case ErrorCode::empty_seed: return "empty_seed";
    case ErrorCode::io_failure: return "io_failure";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::corrupt_table: return "corrupt_table";
    case ErrorCode::non_finite_tensor: return "non_finite_tensor";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::vocab_mismatch: return "vocab_mismatch";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_config:
    case ErrorCode::invalid_schedule:
      return 1;
    case ErrorCode::shape_mismatch:
    case ErrorCode::non_finite_activation:
    case ErrorCode::non_finite_gradient:
      return 3;
    default:
      return 2;
  }
}

}  // namespace speechlm
