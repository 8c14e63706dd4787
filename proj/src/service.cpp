#include "auditllm/service.hpp"

#include <httplib.h>

#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "auditllm/batch.hpp"
#include "auditllm/orchestrator.hpp"

namespace auditllm {

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::probe_generation_failed: return 422;
    case ErrorCode::transport:
    case ErrorCode::endpoint_status:
    case ErrorCode::timeout:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::partial_failure:
      return 502;
    case ErrorCode::config_invalid: return 500;
    case ErrorCode::cancelled: return 503;
    default: return 400;
  }
}

namespace {

using Clock = std::chrono::steady_clock;

std::string random_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  std::ostringstream out;
  out << std::hex << rng() << rng();
  return out.str();
}

Json error_body(std::string_view code, const std::string& message, const std::string& detail = {}) {
  Json body{{"code", code}, {"message", message}};
  if (!detail.empty()) body["detail"] = detail;
  return body;
}

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res, http_status(e.code()), error_body(to_string(e.code()), e.what(), e.detail()));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  std::filesystem::rename(tmp, path);
}

const Json& require_field(const Json& body, const char* name) {
  auto it = body.find(name);
  if (it == body.end() || it->is_null()) {
    throw Error(ErrorCode::invalid_argument, std::string("missing field '") + name + "'");
  }
  return *it;
}

template <typename T>
T field_or(const Json& body, const char* name, T fallback) {
  auto it = body.find(name);
  if (it == body.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::invalid_argument, std::string("field '") + name + "' has the wrong type");
  }
}

}  // namespace

struct AuditService::Impl {
  struct Session {
    std::string model_id;
    ProbeSet probe_set;
    Clock::time_point created;
  };

  struct Job {
    std::string id;
    BatchConfig config;
    std::vector<AuditQuestion> questions;
    std::string status = "queued";
    std::size_t completed = 0;
    std::optional<BatchReport> report;
    std::string error;
    std::jthread thread;
  };

  GatewayConfig config;
  std::shared_ptr<Gateway> gateway;
  std::optional<Error> setup_error;
  std::optional<Auditor> auditor;
  ServiceOptions options;
  httplib::Server server;

  std::mutex sessions_mutex;
  std::map<std::string, Session> sessions;

  std::mutex jobs_mutex;
  std::condition_variable jobs_cv;
  std::map<std::string, std::shared_ptr<Job>> jobs;

  Impl(GatewayConfig cfg, std::shared_ptr<Gateway> gw, std::shared_ptr<Embedder> embedder, ProbeTemplate tmpl,
       ServiceOptions opts)
      : config(std::move(cfg)), gateway(std::move(gw)), options(std::move(opts)) {
    if (!options.clock) options.clock = [] { return Clock::now(); };
    try {
      if (!gateway) gateway = std::make_shared<Gateway>(config);
      if (!embedder) embedder = gateway->embedder(gateway->embedding_model());
      auditor.emplace(*gateway, std::move(tmpl), std::move(embedder));
    } catch (const Error& e) {
      setup_error = e;
    }
    routes();
    if (auditor && options.spool_dir) recover_jobs();
  }

  ~Impl() {
    server.stop();
    std::map<std::string, std::shared_ptr<Job>> snapshot;
    {
      std::lock_guard lock(jobs_mutex);
      snapshot = jobs;
    }
    for (auto& [id, job] : snapshot) {
      job->thread.request_stop();
      if (job->thread.joinable()) job->thread.join();
    }
  }

  Auditor& ready() {
    if (setup_error) throw *setup_error;
    return *auditor;
  }

  // ---------------------------------------------------------------- routes

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      send_json(res, 500, error_body("internal", "internal server error"));
    });

    guarded_get("/api/models", [this](const httplib::Request&, httplib::Response& res) {
      Json out = Json::array();
      for (const auto& d : list_models(config)) out.push_back(d);
      send_json(res, 200, out);
    });
    guarded_post("/api/probes", [this](const httplib::Request& req, httplib::Response& res) { post_probes(req, res); });
    guarded_post("/api/audit", [this](const httplib::Request& req, httplib::Response& res) { post_audit(req, res); });
    guarded_post("/api/batch", [this](const httplib::Request& req, httplib::Response& res) { post_batch(req, res); });
    guarded_get(R"(/api/batch/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      get_job(req.matches[1], res);
    });
    guarded_get(R"(/api/batch/([0-9a-f]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
      get_report(req.matches[1], req, res);
    });
  }

  template <typename Handler>
  auto guard(Handler handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const std::exception&) {
        send_json(res, 500, error_body("internal", "internal server error"));
      }
    };
  }

  template <typename Handler>
  void guarded_get(const std::string& pattern, Handler handler) {
    server.Get(pattern, guard(handler));
  }

  template <typename Handler>
  void guarded_post(const std::string& pattern, Handler handler) {
    server.Post(pattern, guard(handler));
  }

  static Json parse_body(const httplib::Request& req) {
    try {
      auto body = Json::parse(req.body);
      if (!body.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be a JSON object");
      return body;
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::invalid_argument, "request body is not valid JSON", e.what());
    }
  }

  void post_probes(const httplib::Request& req, httplib::Response& res) {
    auto& aud = ready();
    const auto body = parse_body(req);
    const auto model_id = field_or<std::string>(body, "model_id", "");
    const auto question_text = field_or<std::string>(body, "question", "");
    if (model_id.empty()) throw Error(ErrorCode::invalid_argument, "missing field 'model_id'");
    if (trim(question_text).empty()) throw Error(ErrorCode::invalid_argument, "missing field 'question'");

    AuditQuestion question{"live", question_text, std::nullopt};
    auto probe_set = aud.start_audit(model_id, question, field_or(body, "relevance", 5), field_or(body, "diversity", 5),
                                     field_or(body, "n", kDefaultProbeCount));
    const auto id = random_id();
    Json out{{"probe_set_id", id}, {"probes", probe_set.probes}};
    {
      std::lock_guard lock(sessions_mutex);
      purge_sessions();
      sessions[id] = {model_id, std::move(probe_set), options.clock()};
    }
    send_json(res, 200, out);
  }

  void purge_sessions() {
    const auto now = options.clock();
    for (auto it = sessions.begin(); it != sessions.end();) {
      it = now - it->second.created > options.session_ttl ? sessions.erase(it) : std::next(it);
    }
  }

  void post_audit(const httplib::Request& req, httplib::Response& res) {
    auto& aud = ready();
    const auto body = parse_body(req);
    const auto id = require_field(body, "probe_set_id");
    if (!id.is_string()) throw Error(ErrorCode::invalid_argument, "probe_set_id must be a string");
    const auto selected = field_or<std::vector<std::size_t>>(body, "selected", {});
    const auto threshold = field_or(body, "threshold", kDefaultThreshold);
    auto params = GenerationParams::audited_default();
    params.temperature = field_or(body, "temperature", params.temperature);
    params.max_length = field_or(body, "max_length", params.max_length);

    Session session;
    {
      std::lock_guard lock(sessions_mutex);
      purge_sessions();
      auto it = sessions.find(id.get<std::string>());
      if (it == sessions.end()) throw Error(ErrorCode::not_found, "unknown or expired probe_set_id");
      session = it->second;
    }
    const auto report = aud.run_audit(session.model_id, session.probe_set, selected, params, threshold);
    res.status = 200;
    res.set_content(serialize_report(report), "application/json");
  }

  // ---------------------------------------------------------------- batch

  static std::string form_value(const httplib::Request& req, const char* name, std::string fallback) {
    return req.has_file(name) ? req.get_file_value(name).content : std::move(fallback);
  }

  template <typename T, typename Parse>
  static T form_number(const httplib::Request& req, const char* name, T fallback, Parse parse) {
    if (!req.has_file(name)) return fallback;
    const auto text = trim(req.get_file_value(name).content);
    if (text.empty()) return fallback;
    try {
      std::size_t used = 0;
      auto value = parse(text, &used);
      if (used != text.size()) throw std::invalid_argument(name);
      return static_cast<T>(value);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::invalid_argument, std::string("form field '") + name + "' is not a number", text);
    }
  }

  void post_batch(const httplib::Request& req, httplib::Response& res) {
    auto& aud = ready();
    if (!req.is_multipart_form_data() || !req.has_file("file")) {
      throw Error(ErrorCode::invalid_argument, "multipart field 'file' is required");
    }
    const auto file = req.get_file_value("file");
    auto to_int = [](const std::string& s, std::size_t* used) { return std::stoi(s, used); };
    auto to_double = [](const std::string& s, std::size_t* used) { return std::stod(s, used); };

    BatchConfig config;
    config.model_id = trim(form_value(req, "model_id", ""));
    config.relevance = form_number(req, "relevance", config.relevance, to_int);
    config.diversity = form_number(req, "diversity", config.diversity, to_int);
    config.n_probes = form_number(req, "n_probes", config.n_probes, to_int);
    config.threshold = form_number(req, "threshold", config.threshold, to_double);
    config.concurrency = form_number(req, "concurrency", config.concurrency, to_int);
    config.params.temperature = form_number(req, "temperature", config.params.temperature, to_double);
    config.params.max_length = form_number(req, "max_length", config.params.max_length, to_int);
    config.validate();
    if (!aud.gateway().has_generator(config.model_id)) {
      throw Error(ErrorCode::unknown_model, "unknown audited model", config.model_id);
    }

    std::string format_name = trim(form_value(req, "format", ""));
    if (format_name.empty()) {
      const auto& name = file.filename;
      format_name = name.size() >= 5 && name.compare(name.size() - 5, 5, ".xlsx") == 0 ? "xlsx" : "csv";
    }
    auto questions = parse_batch_file(file.content, parse_file_format(format_name));

    auto job = std::make_shared<Job>();
    job->id = random_id();
    job->config = std::move(config);
    job->questions = std::move(questions);
    persist_manifest(*job);
    start_job(job, false);
    send_json(res, 202, Json{{"job_id", job->id}});
  }

  std::filesystem::path job_path(const std::string& id, const char* suffix) const {
    return *options.spool_dir / (id + suffix);
  }

  void persist_manifest(const Job& job) {
    if (!options.spool_dir) return;
    std::filesystem::create_directories(*options.spool_dir);
    Json manifest{{"job_id", job.id}, {"config", job.config}, {"questions", job.questions}, {"status", job.status}};
    write_file(job_path(job.id, ".job.json"), manifest.dump());
  }

  void start_job(const std::shared_ptr<Job>& job, bool resume) {
    {
      std::lock_guard lock(jobs_mutex);
      jobs[job->id] = job;
    }
    job->thread = std::jthread([this, job, resume](std::stop_token stop) {
      {
        std::lock_guard lock(jobs_mutex);
        job->status = "running";
      }
      BatchOptions opts;
      if (options.spool_dir) opts.spool = job_path(job->id, ".spool.jsonl");
      opts.resume = resume;
      opts.stop = stop;
      opts.on_progress = [this, job](std::size_t done, std::size_t) {
        std::lock_guard lock(jobs_mutex);
        job->completed = done;
      };
      std::optional<BatchReport> report;
      std::string error;
      try {
        report = run_batch(*auditor, job->questions, job->config, opts);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::cancelled) return;  // service shutting down; resumable from the spool
        error = std::string(to_string(e.code())) + ": " + e.what();
      } catch (const std::exception& e) {
        error = std::string("internal: ") + e.what();
      }
      {
        std::lock_guard lock(jobs_mutex);
        job->status = report ? "done" : "failed";
        job->report = std::move(report);
        job->error = std::move(error);
        if (job->report) job->completed = job->questions.size();
      }
      if (options.spool_dir) {
        if (job->report) write_file(job_path(job->id, ".report.json"), export_report(*job->report, FileFormat::json));
        persist_manifest(*job);
      }
      jobs_cv.notify_all();
    });
  }

  void recover_jobs() {
    if (!std::filesystem::is_directory(*options.spool_dir)) return;
    for (const auto& entry : std::filesystem::directory_iterator(*options.spool_dir)) {
      const auto name = entry.path().filename().string();
      const std::string suffix = ".job.json";
      if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
        continue;
      }
      try {
        const auto manifest = Json::parse(read_file(entry.path()));
        auto job = std::make_shared<Job>();
        job->id = manifest.at("job_id").get<std::string>();
        manifest.at("config").get_to(job->config);
        manifest.at("questions").get_to(job->questions);
        const auto status = manifest.at("status").get<std::string>();
        const auto report_path = job_path(job->id, ".report.json");
        if (status == "done" && std::filesystem::exists(report_path)) {
          job->status = "done";
          job->report = parse_export_json(read_file(report_path));
          job->completed = job->questions.size();
          std::lock_guard lock(jobs_mutex);
          jobs[job->id] = job;
        } else if (status == "failed") {
          job->status = "failed";
          std::lock_guard lock(jobs_mutex);
          jobs[job->id] = job;
        } else {
          start_job(job, true);
        }
      } catch (const std::exception&) {
        // Unreadable manifest: leave it on disk for inspection.
      }
    }
  }

  std::shared_ptr<Job> find_job(const std::string& id) {
    std::lock_guard lock(jobs_mutex);
    auto it = jobs.find(id);
    if (it == jobs.end()) throw Error(ErrorCode::not_found, "unknown job", id);
    return it->second;
  }

  void get_job(const std::string& id, httplib::Response& res) {
    auto job = find_job(id);
    std::lock_guard lock(jobs_mutex);
    const auto total = job->questions.size();
    Json out{{"job_id", job->id},
             {"status", job->status},
             {"completed", job->completed},
             {"total", total},
             {"progress", total == 0 ? 0.0 : static_cast<double>(job->completed) / static_cast<double>(total)}};
    if (!job->error.empty()) out["error"] = job->error;
    if (job->report) out["failures"] = job->report->failures.size();
    send_json(res, 200, out);
  }

  void get_report(const std::string& id, const httplib::Request& req, httplib::Response& res) {
    auto job = find_job(id);
    const auto format = parse_file_format(req.has_param("format") ? req.get_param_value("format") : "csv");
    std::optional<BatchReport> report;
    {
      std::lock_guard lock(jobs_mutex);
      if (job->status != "done") throw Error(ErrorCode::conflict, "report not available", "job is " + job->status);
      report = job->report;
    }
    const char* type = format == FileFormat::csv    ? "text/csv"
                       : format == FileFormat::json ? "application/json"
                                                    : "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet";
    res.status = 200;
    res.set_header("Content-Disposition", "attachment; filename=\"audit-" + id + "." + std::string(to_string(format)) + "\"");
    res.set_content(export_report(*report, format), type);
  }
};

AuditService::AuditService(GatewayConfig config, ProbeTemplate tmpl, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(config), nullptr, nullptr, std::move(tmpl), std::move(options))) {}

AuditService::AuditService(GatewayConfig config, std::shared_ptr<Gateway> gateway, std::shared_ptr<Embedder> embedder,
                           ProbeTemplate tmpl, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(gateway), std::move(embedder), std::move(tmpl),
                                   std::move(options))) {}

AuditService::~AuditService() = default;

int AuditService::bind_to_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool AuditService::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }

bool AuditService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void AuditService::stop() { impl_->server.stop(); }

bool AuditService::is_running() const { return impl_->server.is_running(); }

void AuditService::wait_for_jobs() {
  std::unique_lock lock(impl_->jobs_mutex);
  impl_->jobs_cv.wait(lock, [this] {
    for (const auto& [id, job] : impl_->jobs) {
      if (job->status == "queued" || job->status == "running") return false;
    }
    return true;
  });
}

}  // namespace auditllm
