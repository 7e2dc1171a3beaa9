#pragma once

#include <stdexcept>
#include <string>

namespace speechlm {

enum class ErrorCode {
  // corpus
  no_speeches_found,
  // configuration
  invalid_config,
  invalid_schedule,
  // numerics
  shape_mismatch,
  non_finite_activation,
  non_finite_gradient,
  // streams
  stream_too_short,
  empty_stream,
  empty_seed,
  // checkpoint I/O
  io_failure,
  bad_magic,
  unsupported_version,
  corrupt_table,
  non_finite_tensor,
  dimension_mismatch,
  vocab_mismatch,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

const char* error_code_name(ErrorCode code);

// Process exit code buckets used by the CLI: 1 = usage, 2 = data, 3 = numeric.
int exit_code_for(ErrorCode code);

}  // namespace speechlm
