#include "auditllm/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "auditllm/error.hpp"

namespace auditllm {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

void require_finite(double value, std::string_view what) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + " is not finite");
  }
}

}  // namespace

std::string trim(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

double floor_to_unit(double value) noexcept { return std::clamp(value, 0.0, 1.0); }

void AuditQuestion::validate() const {
  if (trim(text).empty()) {
    throw Error(ErrorCode::invalid_argument, "question text is empty", id);
  }
}

void GenerationParams::validate() const {
  if (!std::isfinite(temperature) || temperature < 0.0) {
    throw Error(ErrorCode::parameter_out_of_range, "temperature must be >= 0");
  }
  if (max_length < 1) {
    throw Error(ErrorCode::parameter_out_of_range, "max_length must be >= 1");
  }
}

void ProbeSet::validate() const {
  question.validate();
  if (n_requested < 2) {
    throw Error(ErrorCode::parameter_out_of_range, "n_requested must be >= 2");
  }
  if (relevance_score < kMinScale || relevance_score > kMaxScale ||
      diversity_score < kMinScale || diversity_score > kMaxScale) {
    throw Error(ErrorCode::parameter_out_of_range, "relevance/diversity must be in [1,10]");
  }
  if (probes.size() != static_cast<std::size_t>(n_requested)) {
    throw Error(ErrorCode::invalid_argument, "probe count differs from n_requested");
  }
  std::set<std::string> seen;
  for (const auto& probe : probes) {
    auto key = trim(probe);
    if (key.empty()) throw Error(ErrorCode::invalid_argument, "empty probe text");
    if (!seen.insert(std::move(key)).second) {
      throw Error(ErrorCode::duplicate_probe, "duplicate probe text", probe);
    }
  }
}

void ConsistencyReport::validate() const {
  probe_set.validate();
  require_finite(threshold, "threshold");
  require_finite(consistency_score, "consistency_score");
  if (threshold < 0.0 || threshold > 1.0) {
    throw Error(ErrorCode::parameter_out_of_range, "threshold must be in [0,1]");
  }
  std::vector<std::size_t> indices;
  for (const auto& r : responses) {
    if (r.probe_index >= probe_set.probes.size()) {
      throw Error(ErrorCode::invalid_argument, "response probe_index out of range");
    }
    if (!indices.empty() && r.probe_index <= indices.back()) {
      throw Error(ErrorCode::invalid_argument, "responses must be in strictly increasing probe order");
    }
    indices.push_back(r.probe_index);
  }
  const std::size_t k = indices.size();
  if (pairwise.size() != k * (k - (k > 0 ? 1 : 0)) / 2) {
    throw Error(ErrorCode::invalid_argument, "pairwise must hold C(k,2) entries");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      auto it = pairwise.find({indices[i], indices[j]});
      if (it == pairwise.end()) {
        throw Error(ErrorCode::invalid_argument, "pairwise entry missing for a response pair");
      }
      require_finite(it->second, "pairwise similarity");
      if (it->second < 0.0 || it->second > 1.0) {
        throw Error(ErrorCode::invalid_argument, "pairwise similarity outside [0,1]");
      }
      sum += it->second;
    }
  }
  if (!pairwise.empty() &&
      std::abs(sum / static_cast<double>(pairwise.size()) - consistency_score) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "consistency_score is not the mean of pairwise values");
  }
  const std::set<std::size_t> index_set(indices.begin(), indices.end());
  for (const auto& h : highlights) {
    require_finite(h.score, "highlight score");
    if (h.response_a >= h.response_b) {
      throw Error(ErrorCode::invalid_argument, "highlight pair not in canonical order");
    }
    if (!index_set.count(h.response_a) || !index_set.count(h.response_b)) {
      throw Error(ErrorCode::invalid_argument, "highlight refers to a missing response");
    }
    if (h.score < threshold || h.score > 1.0) {
      throw Error(ErrorCode::invalid_argument, "highlight score below threshold");
    }
  }
}

void to_json(Json& j, const AuditQuestion& q) {
  j = Json{{"id", q.id}, {"text", q.text}};
  j["reference_answer"] = q.reference_answer ? Json(*q.reference_answer) : Json(nullptr);
}

void from_json(const Json& j, AuditQuestion& q) {
  j.at("id").get_to(q.id);
  j.at("text").get_to(q.text);
  q.reference_answer.reset();
  if (auto it = j.find("reference_answer"); it != j.end() && !it->is_null()) {
    q.reference_answer = it->get<std::string>();
  }
}

void to_json(Json& j, const GenerationParams& p) {
  j = Json{{"temperature", p.temperature}, {"max_length", p.max_length}};
  j["seed"] = p.seed ? Json(*p.seed) : Json(nullptr);
}

void from_json(const Json& j, GenerationParams& p) {
  j.at("temperature").get_to(p.temperature);
  j.at("max_length").get_to(p.max_length);
  p.seed.reset();
  if (auto it = j.find("seed"); it != j.end() && !it->is_null()) p.seed = it->get<std::int64_t>();
}

void to_json(Json& j, const ProbeSet& s) {
  j = Json{{"question", s.question},
           {"probes", s.probes},
           {"relevance_score", s.relevance_score},
           {"diversity_score", s.diversity_score},
           {"n_requested", s.n_requested}};
}

void from_json(const Json& j, ProbeSet& s) {
  j.at("question").get_to(s.question);
  j.at("probes").get_to(s.probes);
  j.at("relevance_score").get_to(s.relevance_score);
  j.at("diversity_score").get_to(s.diversity_score);
  j.at("n_requested").get_to(s.n_requested);
}

void to_json(Json& j, const ProbeResponse& r) {
  j = Json{{"probe_index", r.probe_index},
           {"text", r.text},
           {"model_id", r.model_id},
           {"params", r.params},
           {"latency_ms", r.latency_ms}};
}

void from_json(const Json& j, ProbeResponse& r) {
  j.at("probe_index").get_to(r.probe_index);
  j.at("text").get_to(r.text);
  j.at("model_id").get_to(r.model_id);
  j.at("params").get_to(r.params);
  j.at("latency_ms").get_to(r.latency_ms);
}

void to_json(Json& j, const SentencePairScore& s) {
  j = Json{{"response_a", s.response_a},
           {"sentence_a", s.sentence_a},
           {"response_b", s.response_b},
           {"sentence_b", s.sentence_b},
           {"score", s.score}};
}

void from_json(const Json& j, SentencePairScore& s) {
  j.at("response_a").get_to(s.response_a);
  j.at("sentence_a").get_to(s.sentence_a);
  j.at("response_b").get_to(s.response_b);
  j.at("sentence_b").get_to(s.sentence_b);
  j.at("score").get_to(s.score);
}

void to_json(Json& j, const ConsistencyReport& r) {
  Json pairs = Json::array();
  for (const auto& [key, value] : r.pairwise) {
    pairs.push_back(Json{{"response_a", key.first}, {"response_b", key.second}, {"similarity", value}});
  }
  j = Json{{"probe_set", r.probe_set},
           {"responses", r.responses},
           {"pairwise", std::move(pairs)},
           {"highlights", r.highlights},
           {"consistency_score", r.consistency_score},
           {"threshold", r.threshold}};
}

void from_json(const Json& j, ConsistencyReport& r) {
  j.at("probe_set").get_to(r.probe_set);
  j.at("responses").get_to(r.responses);
  r.pairwise.clear();
  for (const auto& entry : j.at("pairwise")) {
    ResponsePair key{entry.at("response_a").get<std::size_t>(), entry.at("response_b").get<std::size_t>()};
    if (!r.pairwise.emplace(key, entry.at("similarity").get<double>()).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate pairwise entry");
    }
  }
  j.at("highlights").get_to(r.highlights);
  j.at("consistency_score").get_to(r.consistency_score);
  j.at("threshold").get_to(r.threshold);
}

void to_json(Json& j, const RegressionPoint& p) {
  j = Json{{"x", p.x}, {"y", p.y}, {"question_id", p.question_id}, {"probe_index", p.probe_index}};
}

void from_json(const Json& j, RegressionPoint& p) {
  j.at("x").get_to(p.x);
  j.at("y").get_to(p.y);
  j.at("question_id").get_to(p.question_id);
  j.at("probe_index").get_to(p.probe_index);
}

void to_json(Json& j, const RegressionSummary& s) {
  j = Json{{"slope", s.slope}, {"intercept", s.intercept}, {"n_points", s.n_points}, {"r_squared", s.r_squared}};
}

void from_json(const Json& j, RegressionSummary& s) {
  j.at("slope").get_to(s.slope);
  j.at("intercept").get_to(s.intercept);
  j.at("n_points").get_to(s.n_points);
  j.at("r_squared").get_to(s.r_squared);
}

std::string serialize_report(const ConsistencyReport& report) { return Json(report).dump(); }

ConsistencyReport parse_report(std::string_view text) {
  ConsistencyReport report;
  try {
    Json::parse(text).get_to(report);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::invalid_argument, "malformed report document", e.what());
  }
  report.validate();
  return report;
}

}  // namespace auditllm
