#include <doctest.h>

#include <limits>
#include <stop_token>

#include "auditllm/batch.hpp"
#include "auditllm/similarity.hpp"
#include "support.hpp"

using namespace auditllm;
using namespace testing;

namespace {

GatewayOptions quick_retries() { return {4, std::chrono::seconds(5), 2, std::chrono::milliseconds(1)}; }

BatchConfig config_for(const std::string& model = kAudited, std::size_t concurrency = 4) {
  BatchConfig c;
  c.model_id = model;
  c.concurrency = concurrency;
  return c;
}

std::vector<AuditQuestion> numbered_questions(int k, bool with_reference) {
  std::vector<AuditQuestion> out;
  for (int i = 1; i <= k; ++i) {
    AuditQuestion q{std::to_string(i), "Why does topic" + std::to_string(i) + " matter?", std::nullopt};
    if (with_reference) q.reference_answer = "Topic" + std::to_string(i) + " matters for many reasons.";
    out.push_back(std::move(q));
  }
  return out;
}

std::string data_file(const std::string& name) { return slurp(std::string(AUDITLLM_TEST_DATA_DIR) + "/" + name); }

std::vector<RegressionPoint> pts(std::initializer_list<std::pair<double, double>> xy) {
  std::vector<RegressionPoint> out;
  std::size_t i = 0;
  for (auto [x, y] : xy) out.push_back({x, y, "q", i++});
  return out;
}

}  // namespace

TEST_CASE("parse_batch_file: CSV examples") {
  const auto qs = parse_batch_file("question,reference_answer\nWhy is the sky blue?,Rayleigh scattering.\n", FileFormat::csv);
  REQUIRE(qs.size() == 1);
  CHECK(qs[0].id == "1");
  CHECK(qs[0].text == "Why is the sky blue?");
  CHECK(qs[0].reference_answer == "Rayleigh scattering.");

  const auto no_ref = parse_batch_file("question\r\nA?\r\n\r\n\"B, with a comma?\"\r\n", FileFormat::csv);
  REQUIRE(no_ref.size() == 2);
  CHECK(no_ref[1].id == "2");
  CHECK(no_ref[1].text == "B, with a comma?");
  CHECK_FALSE(no_ref[0].reference_answer.has_value());

  const auto empty_ref = parse_batch_file("reference_answer,question\n,Q?\n", FileFormat::csv);
  CHECK_FALSE(empty_ref[0].reference_answer.has_value());
}

TEST_CASE("parse_batch_file: CSV errors carry the row number") {
  CHECK_ERROR_CODE(parse_batch_file("", FileFormat::csv), ErrorCode::empty_file);
  CHECK_ERROR_CODE(parse_batch_file("question\n", FileFormat::csv), ErrorCode::empty_file);
  CHECK_ERROR_CODE(parse_batch_file("prompt,answer\nA?,B\n", FileFormat::csv), ErrorCode::missing_header);
  try {
    parse_batch_file("question,reference_answer\nA?,x\n  ,y\n", FileFormat::csv);
    FAIL("expected empty_question");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_question);
    CHECK(e.count() == 3u);
  }
  try {
    parse_batch_file("question\nA?\n\"B?\nC?\n", FileFormat::csv);
    FAIL("expected malformed_quoting");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::malformed_quoting);
    CHECK(e.count() == 3u);
  }
  CHECK_ERROR_CODE(parse_batch_file("question\nA?\n", FileFormat::json), ErrorCode::unsupported_format);
}

TEST_CASE("parse_batch_file: workbook written by openpyxl (inline strings)") {
  const auto qs = parse_batch_file(data_file("openpyxl_questions.xlsx"), FileFormat::xlsx);
  REQUIRE(qs.size() == 3);
  CHECK(qs[0].text == "Why is the sky blue?");
  CHECK(qs[0].reference_answer == "Rayleigh scattering makes the sky blue.");
  CHECK(qs[1].text == "What happens if you crack your knuckles a lot?");
  CHECK_FALSE(qs[1].reference_answer.has_value());
  CHECK(qs[2].text == "Qu'est-ce que la \xc2\xab" "libert\xc3\xa9\xc2\xbb?");
  CHECK(qs[2].reference_answer == "Un droit.");
}

TEST_CASE("parse_batch_file: workbook written by xlsxwriter (shared strings, gaps, numbers)") {
  const auto qs = parse_batch_file(data_file("xlsxwriter_questions.xlsx"), FileFormat::xlsx);
  REQUIRE(qs.size() == 4);
  CHECK(qs[0].text == "What is the capital of France?");
  CHECK(qs[0].reference_answer == "Paris.");
  CHECK(qs[1].text == "Is it safe to eat & drink <here>?");
  CHECK_FALSE(qs[1].reference_answer.has_value());
  CHECK(qs[2].text == "What is 2+2?");
  CHECK(qs[2].reference_answer == "Four.");
  CHECK(qs[3].text == "42");
  CHECK(qs[3].id == "4");
  CHECK_ERROR_CODE(parse_batch_file("PK not really a zip", FileFormat::xlsx), ErrorCode::malformed_file);
}

TEST_CASE("BatchConfig validation") {
  CHECK_NOTHROW(config_for().validate());
  auto c = config_for();
  c.model_id.clear();
  CHECK_ERROR_CODE(c.validate(), ErrorCode::invalid_argument);
  c = config_for();
  c.concurrency = 0;
  CHECK_ERROR_CODE(c.validate(), ErrorCode::parameter_out_of_range);
  c = config_for();
  c.threshold = -0.01;
  CHECK_ERROR_CODE(c.validate(), ErrorCode::parameter_out_of_range);
  c = config_for();
  c.n_probes = 1;
  CHECK_ERROR_CODE(c.validate(), ErrorCode::parameter_out_of_range);
}

TEST_CASE("run_batch: three questions give fifteen rows") {
  Rig rig;
  auto auditor = rig.auditor();
  const auto qs = numbered_questions(3, true);
  const auto report = run_batch(auditor, qs, config_for());
  CHECK(report.reports.size() == 3);
  CHECK(report.rows.size() == 15);
  CHECK(report.failures.empty());
  REQUIRE(report.regression.has_value());
  CHECK(report.regression->n_points == 15);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(report.rows[i].question_id == std::to_string(i / 5 + 1));
    CHECK(report.rows[i].probe_index == i % 5);
  }
}

TEST_CASE("run_batch: a model that always fails yields failures, not reports") {
  Rig rig(std::make_shared<FailingModel>(), quick_retries());
  auto auditor = rig.auditor();
  const std::vector<AuditQuestion> qs{{"1", "Why is the sky blue?", std::nullopt}};
  const auto report = run_batch(auditor, qs, config_for());
  CHECK(report.reports.empty());
  CHECK(report.rows.empty());
  CHECK_FALSE(report.regression.has_value());
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].question_id == "1");
  CHECK(report.failures[0].error.find("partial_failure") == 0);
}

TEST_CASE("reference fallback: one extra audited call only when the reference is missing") {
  auto echo = std::make_shared<EchoModel>();
  Rig rig(echo);
  auto auditor = rig.auditor();
  const auto with_ref = numbered_questions(2, true);
  run_batch(auditor, with_ref, config_for());
  CHECK(echo->calls() == 10u);

  auto echo2 = std::make_shared<EchoModel>();
  Rig rig2(echo2);
  auto auditor2 = rig2.auditor();
  const auto without = numbered_questions(2, false);
  const auto report = run_batch(auditor2, without, config_for());
  CHECK(echo2->calls() == 12u);
  // The fallback call sends the bare question at the audited settings.
  bool saw_question = false;
  for (const auto& r : echo2->requests()) {
    if (r.prompt == without[0].text) {
      saw_question = true;
      CHECK(r.params.temperature == 0.5);
    }
  }
  CHECK(saw_question);
  CHECK(report.rows.size() == 10);
}

TEST_CASE("row similarities match an independent recomputation") {
  Rig rig;
  auto auditor = rig.auditor();
  const std::vector<AuditQuestion> qs{{"1", "Why is the sky blue?", "Light scatters. Blue light scatters more."}};
  const auto report = run_batch(auditor, qs, config_for());
  REQUIRE(report.rows.size() == 5);
  const auto q = oracle_hash_embed(qs[0].text, 256);
  const std::vector<std::vector<double>> ref{oracle_hash_embed("Light scatters.", 256),
                                             oracle_hash_embed("Blue light scatters more.", 256)};
  for (const auto& row : report.rows) {
    CHECK(row.response_text == row.probe_text);
    const auto p = oracle_hash_embed(row.probe_text, 256);
    CHECK(std::abs(row.probe_question_similarity - std::max(0.0, oracle_dot(p, q))) <= 1e-12);
    CHECK(std::abs(row.response_reference_similarity - oracle_f({p}, ref)) <= 1e-12);
  }
}

TEST_CASE("regression_points and ols_fit examples") {
  BatchReport empty;
  CHECK_ERROR_CODE(regression_points(empty), ErrorCode::no_points);
  CHECK_ERROR_CODE(ols_fit({}), ErrorCode::no_points);
  CHECK_ERROR_CODE(ols_fit(pts({{0.5, 0.1}, {0.5, 0.9}})), ErrorCode::degenerate_x);
  CHECK_ERROR_CODE(ols_fit(pts({{0.5, 0.1}})), ErrorCode::degenerate_x);

  const auto line = ols_fit(pts({{0, 1}, {1, 3}, {2, 5}}));
  CHECK(line.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(line.intercept == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(line.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(line.n_points == 3);

  const auto flat = ols_fit(pts({{0, 0.4}, {1, 0.4}, {0.5, 0.4}}));
  CHECK(flat.slope == 0.0);
  CHECK(flat.intercept == doctest::Approx(0.4));

  BatchReport two;
  two.rows = {{"1", "Q", 0, "p", "r", 0.25, 0.75}, {"1", "Q", 1, "p2", "r2", 0.5, 0.5}};
  const auto points = regression_points(two);
  REQUIRE(points.size() == 2);
  CHECK(points[1].x == 0.5);
  CHECK(points[1].y == 0.5);
  CHECK(points[1].probe_index == 1);
}

TEST_CASE("ols_fit agrees with a brute-force least-squares grid search") {
  const auto points = pts({{0, 0}, {1, 2}, {2, 3.9}});
  const auto fit = ols_fit(points);
  double best_sse = std::numeric_limits<double>::infinity();
  double best_a = 0.0;
  double best_b = 0.0;
  for (int i = 0; i <= 3000; ++i) {
    const double b = 1.0 + i * 1e-3;
    for (int j = 0; j <= 1000; ++j) {
      const double a = -0.5 + j * 1e-3;
      double sse = 0.0;
      for (const auto& p : points) sse += (p.y - a - b * p.x) * (p.y - a - b * p.x);
      if (sse < best_sse) {
        best_sse = sse;
        best_a = a;
        best_b = b;
      }
    }
  }
  CHECK(std::abs(fit.slope - best_b) <= 1e-3);
  CHECK(std::abs(fit.intercept - best_a) <= 1e-3);
}

TEST_CASE("response similarity tracks probe similarity exactly for an echo model") {
  // y = f(probe, question) = cos(probe, question) = x when both are single
  // sentences, so the fitted line is the identity.
  Rig rig;
  auto auditor = rig.auditor();
  std::vector<AuditQuestion> qs;
  for (const char* text : {"Why is the sky blue?", "What happens if you crack your knuckles a lot?",
                           "How do vaccines train the immune system?", "Where do rivers get their water?"}) {
    qs.push_back({std::to_string(qs.size() + 1), text, text});
  }
  const auto report = run_batch(auditor, qs, config_for());
  REQUIRE(report.regression.has_value());
  CHECK(std::abs(report.regression->slope - 1.0) <= 1e-6);
  CHECK(std::abs(report.regression->intercept) <= 1e-6);

  Rig flat(std::make_shared<ConstantModel>("The answer is always the same."));
  auto flat_auditor = flat.auditor();
  for (auto& q : qs) q.reference_answer.reset();
  const auto constant = run_batch(flat_auditor, qs, config_for());
  REQUIRE(constant.regression.has_value());
  CHECK(std::abs(constant.regression->slope) <= 1e-6);
}

TEST_CASE("render_score uses four decimals") {
  CHECK(render_score(1.0) == "1.0000");
  CHECK(render_score(0.123456) == "0.1235");
  CHECK(render_score(0.0) == "0.0000");
  CHECK(render_score(-0.0) == "0.0000");
  CHECK(render_score(0.99995) == "1.0000");
}

TEST_CASE("exports: CSV and XLSX round-trip to four decimals, JSON losslessly") {
  Rig rig;
  auto auditor = rig.auditor();
  auto qs = numbered_questions(3, false);
  qs[1].text = "Why, \"exactly\", does topic2 matter?";
  const auto report = run_batch(auditor, qs, config_for());

  const auto csv = export_report(report, FileFormat::csv);
  CHECK(csv.rfind(std::string(kExportHeader) + "\r\n", 0) == 0);
  const auto xlsx = export_report(report, FileFormat::xlsx);
  for (const auto& parsed : {parse_export_csv(csv), parse_export_xlsx(xlsx)}) {
    REQUIRE(parsed.size() == report.rows.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      const auto& want = report.rows[i];
      const auto& got = parsed[i].row;
      CHECK(got.question_id == want.question_id);
      CHECK(got.question == want.question);
      CHECK(got.probe_index == want.probe_index);
      CHECK(got.probe_text == want.probe_text);
      CHECK(got.response_text == want.response_text);
      CHECK(std::abs(got.probe_question_similarity - want.probe_question_similarity) <= 5e-5);
      CHECK(std::abs(got.response_reference_similarity - want.response_reference_similarity) <= 5e-5);
      CHECK(render_score(got.probe_question_similarity) == render_score(want.probe_question_similarity));
      CHECK(std::abs(parsed[i].consistency_score - report.reports[i / 5].consistency_score) <= 5e-5);
    }
  }

  const auto json = export_report(report, FileFormat::json);
  CHECK(parse_export_json(json) == report);
  CHECK(export_report(parse_export_json(json), FileFormat::json) == json);
  CHECK(export_report(report, FileFormat::xlsx) == xlsx);
}

TEST_CASE("export parsers reject foreign files") {
  CHECK_ERROR_CODE(parse_export_csv("a,b\n1,2\n"), ErrorCode::missing_header);
  CHECK_ERROR_CODE(parse_export_csv(std::string(kExportHeader) + "\n1,q,0,p,r,x,0.1,0.2\n"), ErrorCode::malformed_file);
  CHECK_ERROR_CODE(parse_export_json("{\"reports\": 3}"), ErrorCode::malformed_file);
}

TEST_CASE("regression sidecar") {
  BatchReport none;
  const auto j = Json::parse(regression_sidecar(none));
  CHECK(j["slope"].is_null());
  CHECK(j["intercept"].is_null());
  CHECK(j["r_squared"].is_null());
  CHECK(j["n_points"] == 0);
  BatchReport fitted;
  fitted.regression = RegressionSummary{0.5, 0.25, 10, 0.9};
  const auto k = Json::parse(regression_sidecar(fitted));
  CHECK(k["slope"] == 0.5);
  CHECK(k["n_points"] == 10);
}

TEST_CASE("failure isolation: one failing question leaves the others intact") {
  auto faulty = std::make_shared<FaultInjectingModel>(std::make_shared<EchoModel>(),
                                                      std::vector<std::string>{"topic3 "});
  Rig rig(faulty, quick_retries());
  auto auditor = rig.auditor();
  const auto qs = numbered_questions(5, true);
  const auto report = run_batch(auditor, qs, config_for());
  CHECK(report.reports.size() == 4);
  CHECK(report.rows.size() == 20);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].question_id == "3");
  for (const auto& row : report.rows) CHECK(row.question_id != "3");

  Rig clean;
  auto clean_auditor = clean.auditor();
  const std::vector<AuditQuestion> others{qs[0], qs[1], qs[3], qs[4]};
  const auto baseline = run_batch(clean_auditor, others, config_for());
  CHECK(baseline.rows == report.rows);
  CHECK(baseline.reports == report.reports);
}

TEST_CASE("property: output does not depend on concurrency") {
  const auto qs = numbered_questions(9, false);
  std::string reference_csv;
  std::string reference_json;
  for (std::size_t concurrency : {1u, 2u, 4u, 8u}) {
    Rig rig;
    auto auditor = rig.auditor();
    const auto report = run_batch(auditor, qs, config_for(kAudited, concurrency));
    const auto csv = export_report(report, FileFormat::csv);
    const auto json = export_report(report, FileFormat::json);
    if (reference_csv.empty()) {
      reference_csv = csv;
      reference_json = json;
    }
    CHECK(csv == reference_csv);
    CHECK(json == reference_json);
  }
}

TEST_CASE("property: every question ends up as exactly one report or one failure") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 8);
    std::vector<std::string> markers;
    for (int i = 1; i <= k; ++i) {
      if (rng() % 3 == 0) markers.push_back("topic" + std::to_string(i) + " ");
    }
    Rig rig(std::make_shared<FaultInjectingModel>(std::make_shared<EchoModel>(), markers), quick_retries());
    auto auditor = rig.auditor();
    const auto qs = numbered_questions(k, rng() % 2 == 0);
    const auto report = run_batch(auditor, qs, config_for(kAudited, 1 + rng() % 4));
    CHECK(report.reports.size() + report.failures.size() == static_cast<std::size_t>(k));
    CHECK(report.failures.size() == markers.size());
    CHECK(report.rows.size() == 5 * report.reports.size());
  }
}

TEST_CASE("progress callback counts up to the total") {
  Rig rig;
  auto auditor = rig.auditor();
  const auto qs = numbered_questions(4, true);
  std::vector<std::size_t> seen;
  BatchOptions options;
  options.on_progress = [&](std::size_t done, std::size_t total) {
    CHECK(total == 4);
    seen.push_back(done);
  };
  run_batch(auditor, qs, config_for(kAudited, 2), options);
  CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4});
}

TEST_CASE("resume: a torn spool finishes to byte-identical exports with no rework") {
  TempDir dir;
  const auto qs = numbered_questions(5, false);
  std::string full_csv;
  std::string full_json;
  {
    Rig rig;
    auto auditor = rig.auditor();
    BatchOptions options;
    options.spool = dir / "full.jsonl";
    const auto report = run_batch(auditor, qs, config_for(), options);
    full_csv = export_report(report, FileFormat::csv);
    full_json = export_report(report, FileFormat::json);
  }
  // Keep two complete records plus half of a third.
  const auto spool = slurp(dir / "full.jsonl");
  std::vector<std::string> lines;
  std::stringstream in(spool);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  spit(dir / "torn.jsonl", lines[0] + "\n" + lines[1] + "\n" + lines[2].substr(0, lines[2].size() / 2));

  auto echo = std::make_shared<EchoModel>();
  Rig rig(echo);
  auto auditor = rig.auditor();
  BatchOptions options;
  options.spool = dir / "torn.jsonl";
  options.resume = true;
  const auto resumed = run_batch(auditor, qs, config_for(), options);
  CHECK(export_report(resumed, FileFormat::csv) == full_csv);
  CHECK(export_report(resumed, FileFormat::json) == full_json);
  // Three questions re-run: five probes plus one reference fallback each.
  CHECK(echo->calls() == 18u);
  std::size_t spool_lines = 0;
  std::stringstream after(slurp(dir / "torn.jsonl"));
  for (std::string line; std::getline(after, line);) {
    CHECK(Json::accept(line));
    ++spool_lines;
  }
  CHECK(spool_lines == 5);
}

TEST_CASE("resume refuses a spool from different input") {
  TempDir dir;
  spit(dir / "s.jsonl", "{\"question_id\": \"1\", \"question\": \"Something else?\", \"report\": {}, \"rows\": []}\n");
  Rig rig;
  auto auditor = rig.auditor();
  BatchOptions options;
  options.spool = dir / "s.jsonl";
  options.resume = true;
  CHECK_ERROR_CODE(run_batch(auditor, numbered_questions(1, true), config_for(), options), ErrorCode::conflict);
}

TEST_CASE("without resume an existing spool is overwritten") {
  TempDir dir;
  spit(dir / "s.jsonl", "garbage\n");
  Rig rig;
  auto auditor = rig.auditor();
  BatchOptions options;
  options.spool = dir / "s.jsonl";
  run_batch(auditor, numbered_questions(2, true), config_for(), options);
  CHECK(slurp(dir / "s.jsonl").find("garbage") == std::string::npos);
}

TEST_CASE("cancellation stops new work, raises cancelled and leaves a resumable spool") {
  TempDir dir;
  auto gate = std::make_shared<GateModel>();
  Rig rig(gate);
  auto auditor = rig.auditor();
  const auto qs = numbered_questions(3, true);
  std::stop_source stop;
  BatchOptions options;
  options.spool = dir / "spool.jsonl";
  options.stop = stop.get_token();

  std::optional<Error> outcome;
  std::thread runner([&] {
    try {
      run_batch(auditor, qs, config_for(kAudited, 1), options);
    } catch (const Error& e) {
      outcome = e;
    }
  });
  // The in-flight cap admits four of the first question's five probes.
  const bool blocked = gate->wait_for_callers(4);
  stop.request_stop();
  gate->open();
  runner.join();
  REQUIRE(blocked);
  REQUIRE(outcome.has_value());
  CHECK(outcome->code() == ErrorCode::cancelled);

  Rig fresh;
  auto fresh_auditor = fresh.auditor();
  BatchOptions resume;
  resume.spool = dir / "spool.jsonl";
  resume.resume = true;
  const auto report = run_batch(fresh_auditor, qs, config_for(), resume);
  CHECK(report.reports.size() == 3);
  CHECK(report.rows.size() == 15);
}

TEST_CASE("run_batch input validation") {
  Rig rig;
  auto auditor = rig.auditor();
  CHECK_ERROR_CODE(run_batch(auditor, std::vector<AuditQuestion>{}, config_for()), ErrorCode::invalid_argument);
  std::vector<AuditQuestion> dup{{"1", "A?", std::nullopt}, {"1", "B?", std::nullopt}};
  CHECK_ERROR_CODE(run_batch(auditor, dup, config_for()), ErrorCode::invalid_argument);
}
