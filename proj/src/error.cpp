#include "migrank/error.hpp"

namespace migrank {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid_input";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kInvariant: return "invariant";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kNetwork: return "network";
    case ErrorCode::kMissingLogprobs: return "missing_logprobs";
    case ErrorCode::kTokenAlignment: return "token_alignment";
    case ErrorCode::kScaleMismatch: return "scale_mismatch";
    case ErrorCode::kUnbalanceable: return "unbalanceable";
    case ErrorCode::kSchemaMismatch: return "schema_mismatch";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kUsage: return "usage";
  }
  return "unknown";
}

}  // namespace migrank
