#pragma once

// Domain values shared by every stage of an audit. No I/O lives here.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace auditllm {

using Json = nlohmann::json;

inline constexpr double kDefaultThreshold = 0.60;
inline constexpr int kDefaultProbeCount = 5;
inline constexpr double kAuditedTemperature = 0.5;
inline constexpr double kGeneratorTemperature = 0.0;
inline constexpr int kDefaultMaxLength = 512;
inline constexpr int kMinScale = 1;
inline constexpr int kMaxScale = 10;

/// Strips ASCII whitespace from both ends.
std::string trim(std::string_view text);

struct AuditQuestion {
  std::string id;
  std::string text;
  std::optional<std::string> reference_answer;

  /// Throws Error(invalid_argument) when the trimmed text is empty.
  void validate() const;

  bool operator==(const AuditQuestion&) const = default;
};

struct GenerationParams {
  double temperature = kAuditedTemperature;
  int max_length = kDefaultMaxLength;
  std::optional<std::int64_t> seed;

  static GenerationParams audited_default() { return {}; }
  static GenerationParams generator_default() {
    return {kGeneratorTemperature, kDefaultMaxLength, std::nullopt};
  }

  void validate() const;

  bool operator==(const GenerationParams&) const = default;
};

struct ProbeSet {
  AuditQuestion question;
  std::vector<std::string> probes;
  int relevance_score = 5;
  int diversity_score = 5;
  int n_requested = kDefaultProbeCount;

  /// Checks the count, non-emptiness and pairwise distinctness of probes.
  void validate() const;

  bool operator==(const ProbeSet&) const = default;
};

struct ProbeResponse {
  std::size_t probe_index = 0;
  std::string text;
  std::string model_id;
  GenerationParams params;
  std::int64_t latency_ms = 0;

  bool operator==(const ProbeResponse&) const = default;
};

struct SentencePairScore {
  std::size_t response_a = 0;
  std::size_t sentence_a = 0;
  std::size_t response_b = 0;
  std::size_t sentence_b = 0;
  double score = 0.0;

  bool operator==(const SentencePairScore&) const = default;
};

/// Unordered response pair stored canonically as (lower, higher) probe index.
using ResponsePair = std::pair<std::size_t, std::size_t>;

struct ConsistencyReport {
  ProbeSet probe_set;
  std::vector<ProbeResponse> responses;
  std::map<ResponsePair, double> pairwise;
  std::vector<SentencePairScore> highlights;
  double consistency_score = 0.0;
  double threshold = kDefaultThreshold;

  /// Enforces the report invariants: C(k,2) pairwise entries keyed by
  /// response probe indices, score equal to their mean, highlights at or
  /// above threshold, every number finite.
  void validate() const;

  bool operator==(const ConsistencyReport&) const = default;
};

struct RegressionPoint {
  double x = 0.0;
  double y = 0.0;
  std::string question_id;
  std::size_t probe_index = 0;

  bool operator==(const RegressionPoint&) const = default;
};

struct RegressionSummary {
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t n_points = 0;
  double r_squared = 0.0;

  bool operator==(const RegressionSummary&) const = default;
};

/// Clamps a cosine-level value onto the [0,1] aggregation scale.
double floor_to_unit(double value) noexcept;

void to_json(Json& j, const AuditQuestion& q);
void from_json(const Json& j, AuditQuestion& q);
void to_json(Json& j, const GenerationParams& p);
void from_json(const Json& j, GenerationParams& p);
void to_json(Json& j, const ProbeSet& s);
void from_json(const Json& j, ProbeSet& s);
void to_json(Json& j, const ProbeResponse& r);
void from_json(const Json& j, ProbeResponse& r);
void to_json(Json& j, const SentencePairScore& s);
void from_json(const Json& j, SentencePairScore& s);
void to_json(Json& j, const ConsistencyReport& r);
void from_json(const Json& j, ConsistencyReport& r);
void to_json(Json& j, const RegressionPoint& p);
void from_json(const Json& j, RegressionPoint& p);
void to_json(Json& j, const RegressionSummary& s);
void from_json(const Json& j, RegressionSummary& s);

/// Canonical serialized form of a report. Numbers are written with
/// shortest round-trip precision so parse_report(serialize_report(r)) == r.
std::string serialize_report(const ConsistencyReport& report);

/// Parses and validates a canonical report document.
ConsistencyReport parse_report(std::string_view text);

}  // namespace auditllm
