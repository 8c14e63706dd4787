#include "auditllm/error.hpp"

#include <utility>

namespace auditllm {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::config_invalid: return "config_invalid";
    case ErrorCode::unknown_model: return "unknown_model";
    case ErrorCode::transport: return "transport";
    case ErrorCode::endpoint_status: return "endpoint_status";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::template_invalid: return "template_invalid";
    case ErrorCode::parameter_out_of_range: return "parameter_out_of_range";
    case ErrorCode::parse_shortfall: return "parse_shortfall";
    case ErrorCode::duplicate_probe: return "duplicate_probe";
    case ErrorCode::probe_generation_failed: return "probe_generation_failed";
    case ErrorCode::empty_text: return "empty_text";
    case ErrorCode::too_few_responses: return "too_few_responses";
    case ErrorCode::too_few_selected: return "too_few_selected";
    case ErrorCode::partial_failure: return "partial_failure";
    case ErrorCode::missing_header: return "missing_header";
    case ErrorCode::empty_file: return "empty_file";
    case ErrorCode::empty_question: return "empty_question";
    case ErrorCode::malformed_quoting: return "malformed_quoting";
    case ErrorCode::malformed_file: return "malformed_file";
    case ErrorCode::degenerate_x: return "degenerate_x";
    case ErrorCode::no_points: return "no_points";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::cancelled: return "cancelled";
  }
  return "unknown";
}

Error::Error(ErrorCode code, std::string message, std::string detail,
             std::optional<std::size_t> count)
    : std::runtime_error(std::move(message)),
      code_(code),
      detail_(std::move(detail)),
      count_(count) {}

bool Error::is_provider_failure() const noexcept {
  switch (code_) {
    case ErrorCode::transport:
    case ErrorCode::endpoint_status:
    case ErrorCode::timeout:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::partial_failure:
      return true;
    default:
      return false;
  }
}

}  // namespace auditllm
