#include "auditllm/batch.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "auditllm/csv.hpp"
#include "auditllm/error.hpp"
#include "auditllm/similarity.hpp"
#include "auditllm/xlsx.hpp"

namespace auditllm {

std::string_view to_string(FileFormat format) noexcept {
  switch (format) {
    case FileFormat::csv: return "csv";
    case FileFormat::xlsx: return "xlsx";
    case FileFormat::json: return "json";
  }
  return "csv";
}

FileFormat parse_file_format(std::string_view name) {
  if (name == "csv") return FileFormat::csv;
  if (name == "xlsx") return FileFormat::xlsx;
  if (name == "json") return FileFormat::json;
  throw Error(ErrorCode::unsupported_format, "unsupported format", std::string(name));
}

void BatchConfig::validate() const {
  if (model_id.empty()) throw Error(ErrorCode::invalid_argument, "batch needs a model_id");
  if (relevance < kMinScale || relevance > kMaxScale || diversity < kMinScale || diversity > kMaxScale) {
    throw Error(ErrorCode::parameter_out_of_range, "relevance/diversity must be in [1,10]");
  }
  if (n_probes < 2) throw Error(ErrorCode::parameter_out_of_range, "n_probes must be >= 2");
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::parameter_out_of_range, "threshold must be in [0,1]");
  }
  if (concurrency < 1) throw Error(ErrorCode::parameter_out_of_range, "concurrency must be >= 1");
  params.validate();
}

// ------------------------------------------------------------------ input

namespace {

struct InputRow {
  std::size_t row_number;
  std::vector<std::string> fields;
};

std::vector<AuditQuestion> questions_from_rows(const std::vector<InputRow>& rows) {
  if (rows.empty()) throw Error(ErrorCode::empty_file, "batch file has no rows");
  const auto& header = rows.front().fields;
  std::optional<std::size_t> question_col;
  std::optional<std::size_t> reference_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = trim(header[i]);
    if (name == "question" && !question_col) question_col = i;
    if (name == "reference_answer" && !reference_col) reference_col = i;
  }
  if (!question_col) {
    throw Error(ErrorCode::missing_header, "header row must name a 'question' column",
                "row " + std::to_string(rows.front().row_number), rows.front().row_number);
  }

  std::vector<AuditQuestion> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& fields = rows[r].fields;
    AuditQuestion q;
    q.id = std::to_string(out.size() + 1);
    q.text = *question_col < fields.size() ? trim(fields[*question_col]) : std::string();
    if (q.text.empty()) {
      throw Error(ErrorCode::empty_question, "row " + std::to_string(rows[r].row_number) + " has an empty question",
                  "row " + std::to_string(rows[r].row_number), rows[r].row_number);
    }
    if (reference_col && *reference_col < fields.size()) {
      auto ref = trim(fields[*reference_col]);
      if (!ref.empty()) q.reference_answer = std::move(ref);
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) throw Error(ErrorCode::empty_file, "batch file has a header but no questions");
  return out;
}

}  // namespace

std::vector<AuditQuestion> parse_batch_file(std::string_view bytes, FileFormat format) {
  if (trim(bytes).empty()) throw Error(ErrorCode::empty_file, "batch file is empty");
  std::vector<InputRow> rows;
  if (format == FileFormat::csv) {
    for (auto& record : parse_csv(bytes)) {
      const bool blank = std::all_of(record.fields.begin(), record.fields.end(),
                                     [](const std::string& f) { return trim(f).empty(); });
      if (!blank) rows.push_back({record.line, std::move(record.fields)});
    }
  } else if (format == FileFormat::xlsx) {
    auto table = read_xlsx(bytes);
    for (std::size_t r = 0; r < table.size(); ++r) {
      const bool blank = std::all_of(table[r].begin(), table[r].end(),
                                     [](const std::string& f) { return trim(f).empty(); });
      if (!blank) rows.push_back({r + 1, std::move(table[r])});
    }
  } else {
    throw Error(ErrorCode::unsupported_format, "batch input must be csv or xlsx", std::string(to_string(format)));
  }
  return questions_from_rows(rows);
}

// ------------------------------------------------------------------ pipeline

QuestionResult audit_question(Auditor& auditor, const AuditQuestion& question, const BatchConfig& config) {
  auto probe_set =
      auditor.start_audit(config.model_id, question, config.relevance, config.diversity, config.n_probes);
  std::vector<std::size_t> all(probe_set.probes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto report = auditor.run_audit(config.model_id, probe_set, all, config.params, config.threshold);

  std::string reference;
  if (question.reference_answer && !trim(*question.reference_answer).empty()) {
    reference = *question.reference_answer;
  } else {
    reference = auditor.gateway().generate_text(config.model_id, question.text, config.params);
  }
  const auto reference_seg = segment_sentences(reference);
  if (reference_seg.sentences.empty()) {
    throw Error(ErrorCode::empty_text, "reference answer has no sentences", question.id);
  }

  auto& embedder = auditor.embedder();
  std::vector<std::string> whole = probe_set.probes;
  whole.push_back(question.text);
  const auto whole_vectors = embedder.embed(whole);

  std::vector<std::string> sentences;
  std::vector<std::size_t> offsets{0};
  for (const auto& r : report.responses) {
    for (const auto& s : segment_sentences(r.text).sentences) sentences.push_back(s.text);
    offsets.push_back(sentences.size());
  }
  for (const auto& s : reference_seg.sentences) sentences.push_back(s.text);
  offsets.push_back(sentences.size());
  const auto sentence_vectors = embedder.embed(sentences);
  if (whole_vectors.size() != whole.size() || sentence_vectors.size() != sentences.size()) {
    throw Error(ErrorCode::dimension_mismatch, "embedder returned the wrong number of vectors");
  }
  const std::span<const EmbeddingVector> all_vectors(sentence_vectors);
  auto slice = [&](std::size_t t) { return all_vectors.subspan(offsets[t], offsets[t + 1] - offsets[t]); };
  const auto reference_vectors = slice(report.responses.size());

  QuestionResult result;
  for (std::size_t k = 0; k < report.responses.size(); ++k) {
    const auto& response = report.responses[k];
    ProbeRow row;
    row.question_id = question.id;
    row.question = question.text;
    row.probe_index = response.probe_index;
    row.probe_text = probe_set.probes[response.probe_index];
    row.response_text = response.text;
    row.probe_question_similarity = floor_to_unit(cosine(whole_vectors[response.probe_index], whole_vectors.back()));
    row.response_reference_similarity = greedy_match(slice(k), reference_vectors).f;
    result.rows.push_back(std::move(row));
  }
  result.report = std::move(report);
  return result;
}

namespace {

Json spool_record(const AuditQuestion& question, const QuestionResult& result) {
  return Json{{"question_id", question.id}, {"question", question.text}, {"report", result.report},
              {"rows", result.rows}};
}

std::map<std::string, QuestionResult> read_spool(const std::filesystem::path& path,
                                                 std::span<const AuditQuestion> questions) {
  std::map<std::string, QuestionResult> done;
  std::ifstream in(path, std::ios::binary);
  if (!in) return done;
  std::map<std::string, const AuditQuestion*> by_id;
  for (const auto& q : questions) by_id[q.id] = &q;

  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    Json record;
    try {
      record = Json::parse(lines[i]);
    } catch (const Json::exception&) {
      if (i + 1 == lines.size()) break;  // torn final write from an interrupted run
      throw Error(ErrorCode::malformed_file, "corrupt spool line", path.string() + ":" + std::to_string(i + 1));
    }
    const auto id = record.at("question_id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end() || it->second->text != record.at("question").get<std::string>()) {
      throw Error(ErrorCode::conflict, "spool does not belong to this input", path.string() + ": question " + id);
    }
    QuestionResult result;
    record.at("report").get_to(result.report);
    record.at("rows").get_to(result.rows);
    result.report.validate();
    done[id] = std::move(result);
  }
  return done;
}

std::string describe(const Error& e) {
  std::string text = std::string(to_string(e.code())) + ": " + e.what();
  if (!e.detail().empty()) text += " (" + e.detail() + ")";
  return text;
}

}  // namespace

BatchReport run_batch(Auditor& auditor, std::span<const AuditQuestion> questions, const BatchConfig& config,
                      const BatchOptions& options) {
  config.validate();
  if (questions.empty()) throw Error(ErrorCode::invalid_argument, "batch has no questions");
  {
    std::set<std::string> ids;
    for (const auto& q : questions) {
      if (!ids.insert(q.id).second) throw Error(ErrorCode::invalid_argument, "duplicate question id", q.id);
    }
  }

  std::vector<std::optional<QuestionResult>> results(questions.size());
  std::vector<std::optional<std::string>> failures(questions.size());

  std::ofstream spool;
  if (options.spool) {
    if (options.resume) {
      auto done = read_spool(*options.spool, questions);
      for (std::size_t i = 0; i < questions.size(); ++i) {
        if (auto it = done.find(questions[i].id); it != done.end()) results[i] = std::move(it->second);
      }
    }
    // Rewritten rather than appended so a torn final line is dropped.
    spool.open(*options.spool, std::ios::binary | std::ios::trunc);
    if (!spool) throw Error(ErrorCode::invalid_argument, "cannot open spool file", options.spool->string());
    for (std::size_t i = 0; i < questions.size(); ++i) {
      if (results[i]) spool << spool_record(questions[i], *results[i]).dump() << '\n';
    }
    spool.flush();
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    if (!results[i]) pending.push_back(i);
  }

  std::mutex mutex;
  std::size_t completed = questions.size() - pending.size();
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      if (options.stop.stop_requested()) return;
      const auto slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const auto i = pending[slot];
      std::optional<QuestionResult> result;
      std::optional<std::string> failure;
      try {
        result = audit_question(auditor, questions[i], config);
      } catch (const Error& e) {
        failure = describe(e);
      } catch (const std::exception& e) {
        failure = std::string("internal: ") + e.what();
      }
      std::lock_guard lock(mutex);
      if (result && spool.is_open()) {
        spool << spool_record(questions[i], *result).dump() << '\n';
        spool.flush();
      }
      results[i] = std::move(result);
      failures[i] = std::move(failure);
      ++completed;
      if (options.on_progress) options.on_progress(completed, questions.size());
    }
  };
  {
    const auto threads = std::min(config.concurrency, std::max<std::size_t>(pending.size(), 1));
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  BatchReport report;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    if (results[i]) {
      report.reports.push_back(results[i]->report);
      report.rows.insert(report.rows.end(), results[i]->rows.begin(), results[i]->rows.end());
    } else if (failures[i]) {
      report.failures.push_back({questions[i].id, *failures[i]});
    } else {
      throw Error(ErrorCode::cancelled, "batch interrupted before every question ran",
                  std::to_string(completed) + " of " + std::to_string(questions.size()) + " done");
    }
  }
  if (report.rows.size() >= 2) {
    try {
      const auto points = regression_points(report);
      report.regression = ols_fit(points);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_x && e.code() != ErrorCode::no_points) throw;
    }
  }
  return report;
}

// ------------------------------------------------------------------ regression

std::vector<RegressionPoint> regression_points(const BatchReport& report) {
  std::vector<RegressionPoint> points;
  points.reserve(report.rows.size());
  for (const auto& row : report.rows) {
    points.push_back({row.probe_question_similarity, row.response_reference_similarity, row.question_id,
                      row.probe_index});
  }
  if (points.empty()) throw Error(ErrorCode::no_points, "report has no complete probe rows");
  return points;
}

RegressionSummary ols_fit(std::span<const RegressionPoint> points) {
  if (points.empty()) throw Error(ErrorCode::no_points, "ols_fit needs points");
  const bool same_x = std::all_of(points.begin(), points.end(),
                                  [&](const RegressionPoint& p) { return p.x == points.front().x; });
  if (points.size() < 2 || same_x) throw Error(ErrorCode::degenerate_x, "x values are all identical");

  const auto n = static_cast<double>(points.size());
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (const auto& p : points) {
    mean_x += p.x;
    mean_y += p.y;
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& p : points) {
    const double dx = p.x - mean_x;
    const double dy = p.y - mean_y;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  RegressionSummary fit;
  fit.n_points = points.size();
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  double ss_res = 0.0;
  for (const auto& p : points) {
    const double e = p.y - (fit.intercept + fit.slope * p.x);
    ss_res += e * e;
  }
  // Constant y is fit exactly by a flat line.
  fit.r_squared = syy == 0.0 ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  return fit;
}

// ------------------------------------------------------------------ export

std::string render_score(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.4f", value);
  std::string out(buffer);
  if (out == "-0.0000") out = "0.0000";
  return out;
}

namespace {

StringTable export_table(const BatchReport& report) {
  std::map<std::string, double> scores;
  for (const auto& r : report.reports) scores[r.probe_set.question.id] = r.consistency_score;

  StringTable table;
  std::vector<std::string> header;
  std::stringstream names{std::string(kExportHeader)};
  for (std::string name; std::getline(names, name, ',');) header.push_back(name);
  table.push_back(std::move(header));
  for (const auto& row : report.rows) {
    table.push_back({row.question_id, row.question, std::to_string(row.probe_index), row.probe_text,
                     row.response_text, render_score(row.probe_question_similarity),
                     render_score(row.response_reference_similarity), render_score(scores.at(row.question_id))});
  }
  return table;
}

std::vector<ExportRow> export_rows_from_table(const StringTable& table) {
  if (table.empty()) throw Error(ErrorCode::missing_header, "export has no header");
  std::string header;
  for (std::size_t i = 0; i < table[0].size(); ++i) header += (i ? "," : "") + table[0][i];
  if (header != kExportHeader) throw Error(ErrorCode::missing_header, "unexpected export header", header);
  std::vector<ExportRow> out;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& f = table[r];
    if (f.size() != 8) {
      throw Error(ErrorCode::malformed_file, "export row has wrong column count", "row " + std::to_string(r + 1), r + 1);
    }
    try {
      ExportRow row;
      row.row = {f[0], f[1], std::stoul(f[2]), f[3], f[4], std::stod(f[5]), std::stod(f[6])};
      row.consistency_score = std::stod(f[7]);
      out.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::malformed_file, "export row has a non-numeric score", "row " + std::to_string(r + 1),
                  r + 1);
    }
  }
  return out;
}

}  // namespace

std::string export_report(const BatchReport& report, FileFormat format) {
  switch (format) {
    case FileFormat::csv: return write_csv(export_table(report));
    case FileFormat::xlsx:
      return write_xlsx(export_table(report), {false, false, true, false, false, true, true, true});
    case FileFormat::json: return Json(report).dump(2) + "\n";
  }
  throw Error(ErrorCode::unsupported_format, "unsupported export format");
}

std::vector<ExportRow> parse_export_csv(std::string_view bytes) {
  StringTable table;
  for (auto& record : parse_csv(bytes)) table.push_back(std::move(record.fields));
  return export_rows_from_table(table);
}

std::vector<ExportRow> parse_export_xlsx(std::string_view bytes) { return export_rows_from_table(read_xlsx(bytes)); }

BatchReport parse_export_json(std::string_view bytes) {
  BatchReport report;
  try {
    Json::parse(bytes).get_to(report);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::malformed_file, "malformed batch report JSON", e.what());
  }
  for (const auto& r : report.reports) r.validate();
  return report;
}

std::string regression_sidecar(const BatchReport& report) {
  Json j;
  if (report.regression) {
    j = *report.regression;
  } else {
    j = Json{{"slope", nullptr}, {"intercept", nullptr}, {"n_points", report.rows.size()}, {"r_squared", nullptr}};
  }
  return j.dump(2) + "\n";
}

// ------------------------------------------------------------------ json

void to_json(Json& j, const ProbeRow& r) {
  j = Json{{"question_id", r.question_id},
           {"question", r.question},
           {"probe_index", r.probe_index},
           {"probe_text", r.probe_text},
           {"response_text", r.response_text},
           {"probe_question_similarity", r.probe_question_similarity},
           {"response_reference_similarity", r.response_reference_similarity}};
}

void from_json(const Json& j, ProbeRow& r) {
  j.at("question_id").get_to(r.question_id);
  j.at("question").get_to(r.question);
  j.at("probe_index").get_to(r.probe_index);
  j.at("probe_text").get_to(r.probe_text);
  j.at("response_text").get_to(r.response_text);
  j.at("probe_question_similarity").get_to(r.probe_question_similarity);
  j.at("response_reference_similarity").get_to(r.response_reference_similarity);
}

void to_json(Json& j, const BatchFailure& f) { j = Json{{"question_id", f.question_id}, {"error", f.error}}; }

void from_json(const Json& j, BatchFailure& f) {
  j.at("question_id").get_to(f.question_id);
  j.at("error").get_to(f.error);
}

void to_json(Json& j, const BatchReport& r) {
  j = Json{{"reports", r.reports}, {"rows", r.rows}, {"failures", r.failures}};
  j["regression"] = r.regression ? Json(*r.regression) : Json(nullptr);
}

void from_json(const Json& j, BatchReport& r) {
  j.at("reports").get_to(r.reports);
  j.at("rows").get_to(r.rows);
  j.at("failures").get_to(r.failures);
  r.regression.reset();
  if (const auto& reg = j.at("regression"); !reg.is_null()) r.regression = reg.get<RegressionSummary>();
}

void to_json(Json& j, const BatchConfig& c) {
  j = Json{{"model_id", c.model_id},       {"relevance", c.relevance}, {"diversity", c.diversity},
           {"n_probes", c.n_probes},       {"threshold", c.threshold}, {"params", c.params},
           {"concurrency", c.concurrency}};
}

void from_json(const Json& j, BatchConfig& c) {
  j.at("model_id").get_to(c.model_id);
  j.at("relevance").get_to(c.relevance);
  j.at("diversity").get_to(c.diversity);
  j.at("n_probes").get_to(c.n_probes);
  j.at("threshold").get_to(c.threshold);
  j.at("params").get_to(c.params);
  j.at("concurrency").get_to(c.concurrency);
}

}  // namespace auditllm
