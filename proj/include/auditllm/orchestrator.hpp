#pragma once

// Live-mode pipeline: the probe generator produces probes for a question,
// the caller picks a subset, the audited model answers each one, and the
// answers are scored against each other.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "auditllm/core.hpp"
#include "auditllm/probe.hpp"
#include "auditllm/provider.hpp"

namespace auditllm {

class Auditor {
 public:
  /// Uses the gateway's configured probe generator and embedding model.
  Auditor(Gateway& gateway, ProbeTemplate tmpl);
  Auditor(Gateway& gateway, ProbeTemplate tmpl, std::shared_ptr<Embedder> embedder);

  ProbeSet start_audit(const std::string& model_id, const AuditQuestion& question, int relevance = 5,
                       int diversity = 5, int n = kDefaultProbeCount);

  /// Queries the audited model once per selected probe (concurrently) and
  /// assembles a validated report. Any provider failure aborts the whole
  /// run with Error(partial_failure) naming the lowest failing probe index.
  ConsistencyReport run_audit(const std::string& model_id, const ProbeSet& probe_set,
                              std::vector<std::size_t> selected,
                              const GenerationParams& params = GenerationParams::audited_default(),
                              double threshold = kDefaultThreshold);

  /// One response per prompt, in input order; `labels` name the prompts in
  /// failure messages.
  std::vector<ProbeResponse> query_all(const std::string& model_id, std::span<const std::string> prompts,
                                       std::span<const std::size_t> labels, const GenerationParams& params);

  Gateway& gateway() noexcept { return gateway_; }
  Embedder& embedder() noexcept { return *embedder_; }
  const ProbeTemplate& probe_template() const noexcept { return template_; }

 private:
  void require_audited_model(const std::string& model_id) const;

  Gateway& gateway_;
  ProbeTemplate template_;
  std::shared_ptr<Embedder> embedder_;
};

}  // namespace auditllm
