#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "auditllm/batch.hpp"
#include "auditllm/error.hpp"
#include "auditllm/orchestrator.hpp"
#include "auditllm/service.hpp"
#include "auditllm/similarity.hpp"

namespace auditllm::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
};

struct AuditFlags {
  std::string model;
  std::string question;
  int relevance = 5;
  int diversity = 5;
  int n = kDefaultProbeCount;
};

struct RunFlags {
  std::vector<std::size_t> select;
  double threshold = kDefaultThreshold;
  double temperature = kAuditedTemperature;
  int max_length = kDefaultMaxLength;
  bool json = false;
};

struct BatchFlags {
  std::string model;
  std::string in;
  std::string out;
  std::string format;
  int relevance = 5;
  int diversity = 5;
  int n = kDefaultProbeCount;
  double threshold = kDefaultThreshold;
  double temperature = kAuditedTemperature;
  int max_length = kDefaultMaxLength;
  std::size_t concurrency = 4;
  bool resume = false;
};

struct ServeFlags {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string spool_dir;
  std::string cors_origin = "*";
};

fs::path resolve_config_path(const Common& common) {
  if (!common.config_path.empty()) return common.config_path;
  if (const char* env = std::getenv("AUDITLLM_CONFIG"); env && *env) return env;
  return "auditllm.config";
}

GatewayConfig load_config(const Common& common) {
  const auto path = resolve_config_path(common);
  if (!fs::exists(path)) throw Error(ErrorCode::config_invalid, "configuration file not found", path.string());
  return GatewayConfig::load(path);
}

ProbeTemplate load_template(const GatewayConfig& config) {
  return config.template_path ? ProbeTemplate::load(*config.template_path) : ProbeTemplate::builtin();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::invalid_argument, "cannot read file", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::invalid_argument, "cannot write file", path.string());
  out << bytes;
}

std::string extension_of(const std::string& path) {
  auto ext = fs::path(path).extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

int exit_code_for(const Error& e) {
  if (e.is_provider_failure() || e.code() == ErrorCode::probe_generation_failed) return kExitProvider;
  return kExitUsage;
}

void print_error(std::ostream& err, const Error& e) {
  Json body{{"code", to_string(e.code())}, {"message", e.what()}};
  if (!e.detail().empty()) body["detail"] = e.detail();
  err << "error: " << body.dump() << '\n';
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  std::replace(text.begin(), text.end(), '\r', ' ');
  return text;
}

// ------------------------------------------------------------------ commands

int cmd_models(const Common& common, std::ostream& out) {
  const auto config = load_config(common);
  for (const auto& d : list_models(config)) out << d.model_id << '\t' << d.display_name << '\t' << d.endpoint_url << '\n';
  return kExitOk;
}

int cmd_probes(const Common& common, const AuditFlags& flags, std::ostream& out) {
  const auto config = load_config(common);
  Gateway gateway(config);
  Auditor auditor(gateway, load_template(config));
  const auto probes = auditor.start_audit(flags.model, {"cli", flags.question, std::nullopt}, flags.relevance,
                                          flags.diversity, flags.n);
  for (std::size_t i = 0; i < probes.probes.size(); ++i) out << i + 1 << ". " << probes.probes[i] << '\n';
  return kExitOk;
}

void print_report_table(const ConsistencyReport& report, std::ostream& out) {
  out << "question: " << one_line(report.probe_set.question.text) << '\n';
  for (const auto& r : report.responses) {
    out << "[" << r.probe_index << "] probe: " << one_line(report.probe_set.probes[r.probe_index]) << '\n';
    out << "    response: " << one_line(r.text) << '\n';
  }
  out << "pairwise:\n";
  for (const auto& [pair, score] : report.pairwise) {
    out << "  " << pair.first << " ~ " << pair.second << "  " << render_score(score) << '\n';
  }
  out << "highlights (threshold " << render_score(report.threshold) << "): " << report.highlights.size() << '\n';
  std::map<std::size_t, SegmentedText> segmented;
  for (const auto& r : report.responses) segmented.emplace(r.probe_index, segment_sentences(r.text));
  for (const auto& h : report.highlights) {
    const auto& a = segmented.at(h.response_a).sentences.at(h.sentence_a).text;
    const auto& b = segmented.at(h.response_b).sentences.at(h.sentence_b).text;
    out << "  " << render_score(h.score) << "  [" << h.response_a << ":" << h.sentence_a << "] " << one_line(a)
        << "  <->  [" << h.response_b << ":" << h.sentence_b << "] " << one_line(b) << '\n';
  }
  out << "consistency_score: " << render_score(report.consistency_score) << '\n';
}

int cmd_run(const Common& common, const AuditFlags& flags, const RunFlags& run, std::ostream& out) {
  const auto config = load_config(common);
  Gateway gateway(config);
  Auditor auditor(gateway, load_template(config));
  const auto probes = auditor.start_audit(flags.model, {"cli", flags.question, std::nullopt}, flags.relevance,
                                          flags.diversity, flags.n);
  std::vector<std::size_t> selected = run.select;
  if (selected.empty()) {
    for (std::size_t i = 0; i < probes.probes.size(); ++i) selected.push_back(i);
  }
  GenerationParams params = GenerationParams::audited_default();
  params.temperature = run.temperature;
  params.max_length = run.max_length;
  const auto report = auditor.run_audit(flags.model, probes, selected, params, run.threshold);
  if (run.json) {
    out << serialize_report(report) << '\n';
  } else {
    print_report_table(report, out);
  }
  return kExitOk;
}

int cmd_batch(const Common& common, const BatchFlags& flags, std::ostream& out, std::ostream& err) {
  const auto in_format = parse_file_format(extension_of(flags.in) == "xlsx" ? "xlsx" : "csv");
  auto questions = parse_batch_file(read_file(flags.in), in_format);

  FileFormat out_format = FileFormat::csv;
  if (!flags.format.empty()) {
    out_format = parse_file_format(flags.format);
  } else if (const auto ext = extension_of(flags.out); ext == "xlsx" || ext == "json") {
    out_format = parse_file_format(ext);
  }

  BatchConfig batch;
  batch.model_id = flags.model;
  batch.relevance = flags.relevance;
  batch.diversity = flags.diversity;
  batch.n_probes = flags.n;
  batch.threshold = flags.threshold;
  batch.params.temperature = flags.temperature;
  batch.params.max_length = flags.max_length;
  batch.concurrency = flags.concurrency;
  batch.validate();

  const auto config = load_config(common);
  Gateway gateway(config);
  Auditor auditor(gateway, load_template(config));

  BatchOptions options;
  options.spool = flags.out + ".spool.jsonl";
  options.resume = flags.resume;
  const auto report = run_batch(auditor, questions, batch, options);

  write_file(flags.out, export_report(report, out_format));
  write_file(flags.out + ".regression.json", regression_sidecar(report));

  if (report.regression) {
    const auto& fit = *report.regression;
    out << "slope=" << render_score(fit.slope) << " intercept=" << render_score(fit.intercept)
        << " r_squared=" << render_score(fit.r_squared) << " n=" << fit.n_points << '\n';
  } else {
    out << "slope=n/a n=" << report.rows.size() << '\n';
  }
  err << "failures: " << report.failures.size() << " of " << questions.size() << '\n';
  for (const auto& f : report.failures) err << "  question " << f.question_id << ": " << f.error << '\n';
  return report.reports.empty() ? kExitAllFailed : kExitOk;
}

AuditService* g_service = nullptr;

extern "C" void stop_service(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const Common& common, const ServeFlags& flags, std::ostream& out) {
  auto config = load_config(common);
  auto tmpl = load_template(config);
  ServiceOptions options;
  options.cors_origin = flags.cors_origin;
  if (!flags.spool_dir.empty()) options.spool_dir = flags.spool_dir;
  AuditService service(std::move(config), std::move(tmpl), std::move(options));
  if (!service.bind(flags.host, flags.port)) {
    throw Error(ErrorCode::invalid_argument, "cannot bind", flags.host + ":" + std::to_string(flags.port));
  }
  out << "listening on http://" << flags.host << ":" << flags.port << '\n' << std::flush;
  g_service = &service;
  std::signal(SIGINT, stop_service);
  std::signal(SIGTERM, stop_service);
  service.listen_after_bind();
  g_service = nullptr;
  return kExitOk;
}

void add_audit_flags(CLI::App* cmd, AuditFlags& flags) {
  cmd->add_option("--model", flags.model, "Audited model id")->required();
  cmd->add_option("--question", flags.question, "Question to audit")->required();
  cmd->add_option("--relevance", flags.relevance, "Probe relevance knob")->check(CLI::Range(kMinScale, kMaxScale));
  cmd->add_option("--diversity", flags.diversity, "Probe diversity knob")->check(CLI::Range(kMinScale, kMaxScale));
  cmd->add_option("--n", flags.n, "Number of probes")->check(CLI::Range(2, 100));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Consistency auditing for language models", "audit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  app.add_option("--config", common.config_path, "Configuration file (else $AUDITLLM_CONFIG, else ./auditllm.config)");

  auto* models = app.add_subcommand("models", "List configured audited models");

  AuditFlags probe_flags;
  auto* probes = app.add_subcommand("probes", "Generate probes for a question");
  add_audit_flags(probes, probe_flags);

  AuditFlags run_audit_flags;
  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "Run a full audit for one question");
  add_audit_flags(run_cmd, run_audit_flags);
  run_cmd->add_option("--select", run_flags.select, "Probe indices to audit (default: all)")->delimiter(',');
  run_cmd->add_option("--threshold", run_flags.threshold, "Highlight threshold")->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--temperature", run_flags.temperature, "Audited model temperature");
  run_cmd->add_option("--max-length", run_flags.max_length, "Audited model max tokens");
  run_cmd->add_flag("--json", run_flags.json, "Print the report as JSON");

  BatchFlags batch_flags;
  auto* batch = app.add_subcommand("batch", "Audit every question in a CSV or XLSX file");
  batch->add_option("--model", batch_flags.model, "Audited model id")->required();
  batch->add_option("--in", batch_flags.in, "Input file (.csv or .xlsx)")->required();
  batch->add_option("--out", batch_flags.out, "Report file")->required();
  batch->add_option("--format", batch_flags.format, "Report format: csv, xlsx or json (default: from --out)");
  batch->add_option("--relevance", batch_flags.relevance)->check(CLI::Range(kMinScale, kMaxScale));
  batch->add_option("--diversity", batch_flags.diversity)->check(CLI::Range(kMinScale, kMaxScale));
  batch->add_option("--n", batch_flags.n, "Probes per question")->check(CLI::Range(2, 100));
  batch->add_option("--threshold", batch_flags.threshold)->check(CLI::Range(0.0, 1.0));
  batch->add_option("--temperature", batch_flags.temperature);
  batch->add_option("--max-length", batch_flags.max_length);
  batch->add_option("--concurrency", batch_flags.concurrency)->check(CLI::Range(1, 256));
  batch->add_flag("--resume", batch_flags.resume, "Reuse questions completed by an interrupted run");

  ServeFlags serve_flags;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--host", serve_flags.host);
  serve->add_option("--port", serve_flags.port);
  serve->add_option("--spool-dir", serve_flags.spool_dir, "Directory for resumable batch jobs");
  serve->add_option("--cors-origin", serve_flags.cors_origin);

  std::vector<const char*> argv{"audit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*models) return cmd_models(common, out);
    if (*probes) return cmd_probes(common, probe_flags, out);
    if (*run_cmd) return cmd_run(common, run_audit_flags, run_flags, out);
    if (*batch) return cmd_batch(common, batch_flags, out, err);
    if (*serve) return cmd_serve(common, serve_flags, out);
  } catch (const Error& e) {
    print_error(err, e);
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << Json{{"code", "internal"}, {"message", e.what()}}.dump() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace auditllm::cli
