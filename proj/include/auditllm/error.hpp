#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace auditllm {

enum class ErrorCode {
  invalid_argument,
  config_invalid,
  unknown_model,
  transport,
  endpoint_status,
  timeout,
  dimension_mismatch,
  template_invalid,
  parameter_out_of_range,
  parse_shortfall,
  duplicate_probe,
  probe_generation_failed,
  empty_text,
  too_few_responses,
  too_few_selected,
  partial_failure,
  missing_header,
  empty_file,
  empty_question,
  malformed_quoting,
  malformed_file,
  degenerate_x,
  no_points,
  unsupported_format,
  not_found,
  conflict,
  cancelled,
};

/// Stable lower_snake_case name used on the wire and in CLI diagnostics.
std::string_view to_string(ErrorCode code) noexcept;

/// The single exception type thrown by the library. `detail` carries
/// free-form context (endpoint identity, body excerpt, row number), and
/// `count` is populated where an error reports a quantity (items found by
/// the probe parser, offending row in a batch file, failed probe index).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string detail = {},
        std::optional<std::size_t> count = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  std::optional<std::size_t> count() const noexcept { return count_; }

  /// True for errors that come from talking to a model endpoint.
  bool is_provider_failure() const noexcept;

 private:
  ErrorCode code_;
  std::string detail_;
  std::optional<std::size_t> count_;
};

}  // namespace auditllm
