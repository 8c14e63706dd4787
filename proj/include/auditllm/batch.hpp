#pragma once

// Batch mode: audit every question of an uploaded file with all generated
// probes, export a per-probe report, and fit response similarity against
// probe similarity.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "auditllm/core.hpp"
#include "auditllm/orchestrator.hpp"

namespace auditllm {

enum class FileFormat { csv, xlsx, json };

std::string_view to_string(FileFormat format) noexcept;
/// Throws Error(unsupported_format).
FileFormat parse_file_format(std::string_view name);

struct BatchConfig {
  std::string model_id;
  int relevance = 5;
  int diversity = 5;
  int n_probes = kDefaultProbeCount;
  double threshold = kDefaultThreshold;
  GenerationParams params = GenerationParams::audited_default();
  std::size_t concurrency = 4;

  void validate() const;
};

struct ProbeRow {
  std::string question_id;
  std::string question;
  std::size_t probe_index = 0;
  std::string probe_text;
  std::string response_text;
  double probe_question_similarity = 0.0;
  double response_reference_similarity = 0.0;

  bool operator==(const ProbeRow&) const = default;
};

struct BatchFailure {
  std::string question_id;
  std::string error;

  bool operator==(const BatchFailure&) const = default;
};

struct BatchReport {
  std::vector<ConsistencyReport> reports;
  std::vector<ProbeRow> rows;
  std::optional<RegressionSummary> regression;
  std::vector<BatchFailure> failures;

  bool operator==(const BatchReport&) const = default;
};

/// Completed work for one question; one spool line each.
struct QuestionResult {
  ConsistencyReport report;
  std::vector<ProbeRow> rows;

  bool operator==(const QuestionResult&) const = default;
};

struct BatchOptions {
  /// Append-only JSON-lines work log of completed questions.
  std::optional<std::filesystem::path> spool;
  /// Reuse completed questions found in the spool instead of truncating it.
  bool resume = false;
  /// Called after each question finishes (completed, total).
  std::function<void(std::size_t, std::size_t)> on_progress;
  /// When stop is requested no new questions start and run_batch throws
  /// Error(cancelled) once in-flight questions finish.
  std::stop_token stop;
};

/// CSV: header naming a `question` column and optionally
/// `reference_answer`; ids are assigned "1".."k" in row order. XLSX: same
/// contract on the first worksheet.
std::vector<AuditQuestion> parse_batch_file(std::string_view bytes, FileFormat format);

/// Audits one question end to end (no user selection: every probe is used).
QuestionResult audit_question(Auditor& auditor, const AuditQuestion& question, const BatchConfig& config);

BatchReport run_batch(Auditor& auditor, std::span<const AuditQuestion> questions, const BatchConfig& config,
                      const BatchOptions& options = {});

std::vector<RegressionPoint> regression_points(const BatchReport& report);

/// Simple ordinary least squares of y on x. Throws Error(no_points) on an
/// empty input and Error(degenerate_x) when every x is identical.
RegressionSummary ols_fit(std::span<const RegressionPoint> points);

/// Fixed four-decimal rendering used by every tabular export.
std::string render_score(double value);

inline constexpr std::string_view kExportHeader =
    "question_id,question,probe_index,probe_text,response_text,probe_question_similarity,"
    "response_reference_similarity,consistency_score";

std::string export_report(const BatchReport& report, FileFormat format);

/// One data row of a tabular export, parsed back.
struct ExportRow {
  ProbeRow row;
  double consistency_score = 0.0;
};

std::vector<ExportRow> parse_export_csv(std::string_view bytes);
std::vector<ExportRow> parse_export_xlsx(std::string_view bytes);
BatchReport parse_export_json(std::string_view bytes);

/// Regression sidecar: {slope, intercept, n_points, r_squared}; fields are
/// null when no fit exists.
std::string regression_sidecar(const BatchReport& report);

void to_json(Json& j, const ProbeRow& r);
void from_json(const Json& j, ProbeRow& r);
void to_json(Json& j, const BatchFailure& f);
void from_json(const Json& j, BatchFailure& f);
void to_json(Json& j, const BatchReport& r);
void from_json(const Json& j, BatchReport& r);
void to_json(Json& j, const BatchConfig& c);
void from_json(const Json& j, BatchConfig& c);

}  // namespace auditllm
