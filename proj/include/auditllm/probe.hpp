#pragma once

// Probe generation: render the generator prompt, call the generator model,
// and turn its enumerated-list reply into a validated ProbeSet.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "auditllm/core.hpp"
#include "auditllm/provider.hpp"

namespace auditllm {

/// Attempts made by generate_probes before giving up (first try + 2 retries).
inline constexpr int kProbeGenerationAttempts = 3;

class ProbeTemplate {
 public:
  /// Throws Error(template_invalid) unless each of {question}, {n_probes},
  /// {relevance_score} and {diversity_score} occurs exactly once.
  explicit ProbeTemplate(std::string body);

  static ProbeTemplate builtin();
  static ProbeTemplate load(const std::filesystem::path& path);

  const std::string& body() const noexcept { return body_; }

 private:
  std::string body_;
};

std::string render_probe_prompt(const ProbeTemplate& tmpl, const AuditQuestion& question, int n,
                                int relevance, int diversity);

/// Suffix appended to the prompt when a previous reply did not parse.
std::string format_reminder(int n);

/// Accepts lines of the form `1. body`, `1) body`, `- body`, `* body` (any
/// leading whitespace, at least one space after the marker). When fewer
/// than n marked items exist but the reply has exactly n non-empty lines,
/// none of them a bare marker, every line is taken as an item. Returns the first n bodies, trimmed.
/// Throws Error(parse_shortfall, count = items found) or
/// Error(duplicate_probe) when two bodies match after trimming and ASCII
/// case-folding.
std::vector<std::string> parse_probe_list(std::string_view raw, int n);

struct ProbeRequest {
  AuditQuestion question;
  int n = kDefaultProbeCount;
  int relevance = 5;
  int diversity = 5;
};

/// Render, generate at temperature 0.0, parse; retries on unparseable
/// output with a format reminder. Throws Error(probe_generation_failed)
/// wrapping the last parse error once attempts are exhausted; gateway
/// errors propagate unchanged.
ProbeSet generate_probes(Gateway& gateway, std::string_view generator_model, const ProbeTemplate& tmpl,
                         const ProbeRequest& request);

}  // namespace auditllm
