#pragma once

// JSON-over-HTTP facade for the live UI and programmatic clients.
//
//   GET  /api/models
//   POST /api/probes                 {model_id, question, relevance?, diversity?, n?}
//   POST /api/audit                  {probe_set_id, selected[], threshold?}
//   POST /api/batch                  multipart: file + BatchConfig fields
//   GET  /api/batch/{job_id}         {status, progress, completed, total}
//   GET  /api/batch/{job_id}/report?format=csv|xlsx|json
//
// Errors are always {code, message, detail?}.

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "auditllm/error.hpp"
#include "auditllm/probe.hpp"
#include "auditllm/provider.hpp"

namespace auditllm {

inline constexpr std::chrono::minutes kSessionTtl{30};

struct ServiceOptions {
  std::string cors_origin = "*";
  std::chrono::steady_clock::duration session_ttl = kSessionTtl;
  /// Where batch jobs keep their manifests, spools and finished reports.
  /// Unfinished jobs found here are resumed when the service starts.
  std::optional<std::filesystem::path> spool_dir;
  /// Time source for session expiry; defaults to steady_clock::now.
  std::function<std::chrono::steady_clock::time_point()> clock;
};

/// HTTP status for a library error.
int http_status(ErrorCode code) noexcept;

class AuditService {
 public:
  /// Builds a gateway from `config`. Configuration errors do not throw
  /// here; every endpoint then answers 500 with the error body.
  AuditService(GatewayConfig config, ProbeTemplate tmpl, ServiceOptions options = {});
  /// Uses an existing gateway and embedder (tests, embedding in a host).
  AuditService(GatewayConfig config, std::shared_ptr<Gateway> gateway, std::shared_ptr<Embedder> embedder,
               ProbeTemplate tmpl, ServiceOptions options = {});
  ~AuditService();

  AuditService(const AuditService&) = delete;
  AuditService& operator=(const AuditService&) = delete;

  /// Binds to an OS-chosen port and returns it (or -1).
  int bind_to_any_port(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Serves until stop(); call after a bind.
  bool listen_after_bind();
  void stop();
  bool is_running() const;

  /// Blocks until every batch job has left the queued/running states.
  void wait_for_jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace auditllm
