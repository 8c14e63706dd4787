#include "auditllm/orchestrator.hpp"

#include <algorithm>
#include <future>
#include <optional>

#include "auditllm/error.hpp"
#include "auditllm/similarity.hpp"

namespace auditllm {

Auditor::Auditor(Gateway& gateway, ProbeTemplate tmpl)
    : Auditor(gateway, std::move(tmpl), gateway.embedder(gateway.embedding_model())) {}

Auditor::Auditor(Gateway& gateway, ProbeTemplate tmpl, std::shared_ptr<Embedder> embedder)
    : gateway_(gateway), template_(std::move(tmpl)), embedder_(std::move(embedder)) {
  if (!embedder_) throw Error(ErrorCode::invalid_argument, "auditor needs an embedder");
}

void Auditor::require_audited_model(const std::string& model_id) const {
  if (!gateway_.has_generator(model_id)) throw Error(ErrorCode::unknown_model, "unknown audited model", model_id);
}

ProbeSet Auditor::start_audit(const std::string& model_id, const AuditQuestion& question, int relevance,
                              int diversity, int n) {
  question.validate();
  require_audited_model(model_id);
  return generate_probes(gateway_, gateway_.probe_generator(), template_, {question, n, relevance, diversity});
}

std::vector<ProbeResponse> Auditor::query_all(const std::string& model_id, std::span<const std::string> prompts,
                                              std::span<const std::size_t> labels, const GenerationParams& params) {
  params.validate();
  std::vector<std::future<Completion>> pending;
  pending.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    pending.push_back(std::async(std::launch::async, [this, &model_id, &prompt, &params] {
      return gateway_.generate(model_id, prompt, params);
    }));
  }

  std::vector<ProbeResponse> responses;
  std::optional<Error> first_failure;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    try {
      auto completion = pending[i].get();
      responses.push_back({labels[i], std::move(completion.text), model_id, params, completion.latency_ms.value_or(0)});
    } catch (const Error& e) {
      if (!first_failure) {
        first_failure.emplace(ErrorCode::partial_failure,
                              "audited model failed on probe " + std::to_string(labels[i]),
                              std::string(to_string(e.code())) + ": " + e.what() +
                                  (e.detail().empty() ? "" : " (" + e.detail() + ")"),
                              labels[i]);
      }
    }
  }
  if (first_failure) throw *first_failure;
  return responses;
}

ConsistencyReport Auditor::run_audit(const std::string& model_id, const ProbeSet& probe_set,
                                     std::vector<std::size_t> selected, const GenerationParams& params,
                                     double threshold) {
  probe_set.validate();
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::parameter_out_of_range, "threshold must be in [0,1]");
  }
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());
  for (auto index : selected) {
    if (index >= probe_set.probes.size()) {
      throw Error(ErrorCode::invalid_argument, "selected probe index out of range", std::to_string(index));
    }
  }
  if (selected.size() < 2) {
    throw Error(ErrorCode::too_few_selected, "select at least two distinct probes", {}, selected.size());
  }
  require_audited_model(model_id);

  std::vector<std::string> prompts;
  for (auto index : selected) prompts.push_back(probe_set.probes[index]);
  auto responses = query_all(model_id, prompts, selected, params);

  std::vector<SegmentedText> segmented;
  for (const auto& r : responses) {
    segmented.push_back(segment_sentences(r.text));
    if (segmented.back().sentences.empty()) {
      throw Error(ErrorCode::partial_failure, "audited model returned an empty response",
                  "probe " + std::to_string(r.probe_index), r.probe_index);
    }
  }
  auto scored = score_responses(segmented, selected, *embedder_, threshold);

  ConsistencyReport report{probe_set, std::move(responses), std::move(scored.pairwise),
                           std::move(scored.highlights), scored.score, threshold};
  report.validate();
  return report;
}

}  // namespace auditllm
