#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace migrank {

enum class ErrorCode {
  kInvalidInput,
  kParse,
  kInvariant,
  kIo,
  kNetwork,
  kMissingLogprobs,
  kTokenAlignment,
  kScaleMismatch,
  kUnbalanceable,
  kSchemaMismatch,
  kNumerical,
  kDivergence,
  kConfig,
  kUsage,
};

// Stable machine-readable name, used in CLI error lines.
std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace migrank
