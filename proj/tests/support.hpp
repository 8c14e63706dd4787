#pragma once

// Shared fixtures for the test binaries: temp directories, a gateway wired
// to in-process mocks, scoring oracles written independently of the
// library, and a scriptable OpenAI-compatible HTTP server.

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "auditllm/mock_models.hpp"
#include "auditllm/orchestrator.hpp"
#include "auditllm/provider.hpp"

/// Checks that `expr` throws auditllm::Error with the given code.
#define CHECK_ERROR_CODE(expr, ec)                                   \
  do {                                                               \
    try {                                                            \
      (void)(expr);                                                  \
      FAIL_CHECK("expected auditllm::Error " << #ec);                \
    } catch (const ::auditllm::Error& caught_) {                     \
      CHECK_MESSAGE(caught_.code() == (ec), caught_.what());         \
    }                                                                \
  } while (0)

namespace testing {

using namespace auditllm;

inline const std::string kGenerator = "mistral-7b";
inline const std::string kAudited = "target";
inline const std::string kEmbedding = "all-mpnet-base-v2";

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("auditllm-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

inline ModelDescriptor descriptor(const std::string& id, ModelKind kind = ModelKind::generation,
                                  const std::string& url = "mock://test") {
  return {id, id, url, kind};
}

/// Gateway with a paraphrasing probe generator, one audited model and a
/// hashed bag-of-words embedder.
struct Rig {
  std::shared_ptr<Gateway> gateway;
  std::shared_ptr<ParaphraseModel> generator;
  std::shared_ptr<GenerationBackend> audited;
  std::shared_ptr<HashEmbedder> embedder;

  explicit Rig(std::shared_ptr<GenerationBackend> audited_model = std::make_shared<EchoModel>(),
               GatewayOptions options = {})
      : gateway(std::make_shared<Gateway>(options)),
        generator(std::make_shared<ParaphraseModel>()),
        audited(std::move(audited_model)),
        embedder(std::make_shared<HashEmbedder>(256)) {
    gateway->register_generator(descriptor(kGenerator), generator);
    gateway->register_generator(descriptor(kAudited), audited);
    gateway->register_embedder(descriptor(kEmbedding, ModelKind::embedding), embedder);
    gateway->set_probe_generator(kGenerator);
    gateway->set_embedding_model(kEmbedding);
  }

  Auditor auditor() { return Auditor(*gateway, ProbeTemplate::builtin(), embedder); }
};

// ------------------------------------------------------------------ oracles

/// FNV-1a 64 and hashed bag-of-words, written out longhand.
inline std::uint64_t oracle_fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < s.size(); ++i) {
    h = (h ^ static_cast<std::uint8_t>(s[i])) * 0x100000001b3ull;
  }
  return h;
}

inline std::vector<double> oracle_hash_embed(const std::string& text, std::size_t dim) {
  std::vector<std::string> tokens(1);
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool word = c >= 0x80 || std::isalnum(c);
    if (word) {
      tokens.back() += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    } else if (!tokens.back().empty()) {
      tokens.emplace_back();
    }
  }
  std::vector<double> v(dim, 0.0);
  bool any = false;
  for (const auto& t : tokens) {
    if (t.empty()) continue;
    v[oracle_fnv1a(t) % dim] += 1.0;
    any = true;
  }
  if (!any) {
    v[0] = 1.0;
    return v;
  }
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

inline double oracle_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return std::max(-1.0, std::min(1.0, s));
}

/// Exhaustive sentence-alignment F between two responses given as vectors.
inline double oracle_f(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  auto directed = [](const auto& from, const auto& to) {
    double total = 0.0;
    for (const auto& u : from) {
      double best = 0.0;
      for (const auto& v : to) best = std::max(best, oracle_dot(u, v));
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  const double p = directed(a, b);
  const double r = directed(b, a);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

/// Mean of oracle_f over all unordered pairs of responses, each response a
/// list of sentence texts embedded with oracle_hash_embed.
inline double oracle_consistency(const std::vector<std::vector<std::string>>& responses, std::size_t dim) {
  std::vector<std::vector<std::vector<double>>> vecs;
  for (const auto& r : responses) {
    std::vector<std::vector<double>> sv;
    for (const auto& s : r) sv.push_back(oracle_hash_embed(s, dim));
    vecs.push_back(std::move(sv));
  }
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    for (std::size_t j = i + 1; j < vecs.size(); ++j) {
      total += oracle_f(vecs[i], vecs[j]);
      ++pairs;
    }
  }
  return total / pairs;
}

/// Unit vectors in R^3 whose pairwise cosine is exactly `c` relative to e0.
inline std::vector<double> at_cosine(double c) { return {c, std::sqrt(1.0 - c * c), 0.0}; }

// ------------------------------------------------------------------ models

/// Audited model that blocks every call until released.
class GateModel final : public GenerationBackend {
 public:
  Completion complete(const std::string& prompt, const GenerationParams&) override {
    std::unique_lock lock(mutex_);
    ++waiting_;
    cv_.notify_all();
    cv_.wait(lock, [this] { return open_; });
    return {prompt, 0};
  }
  void open() {
    std::lock_guard lock(mutex_);
    open_ = true;
    cv_.notify_all();
  }
  bool wait_for_callers(int n, std::chrono::milliseconds limit = std::chrono::seconds(5)) {
    std::unique_lock lock(mutex_);
    return cv_.wait_for(lock, limit, [&] { return waiting_ >= n; });
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  bool open_ = false;
  int waiting_ = 0;
};

/// Records peak concurrency.
class SlowModel final : public GenerationBackend {
 public:
  explicit SlowModel(std::chrono::milliseconds delay) : delay_(delay) {}
  Completion complete(const std::string& prompt, const GenerationParams&) override {
    const int now = ++active_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    std::this_thread::sleep_for(delay_);
    --active_;
    return {prompt, 0};
  }
  int peak() const { return peak_.load(); }

 private:
  std::chrono::milliseconds delay_;
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

/// Throws a chosen error for the first `failures` calls, then echoes.
class FlakyModel final : public GenerationBackend {
 public:
  FlakyModel(int failures, ErrorCode code) : failures_(failures), code_(code) {}
  Completion complete(const std::string& prompt, const GenerationParams&) override {
    if (calls_++ < failures_) throw Error(code_, "flaky failure");
    return {prompt, 0};
  }
  int calls() const { return calls_.load(); }

 private:
  int failures_;
  ErrorCode code_;
  std::atomic<int> calls_{0};
};

// ------------------------------------------------------------------ fake server

/// OpenAI-compatible endpoint on a loopback port with per-route handlers.
class FakeOpenAi {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  FakeOpenAi() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      record(req);
      chat_(req, res);
    });
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      record(req);
      embeddings_(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeOpenAi() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  void on_chat(Handler h) { chat_ = std::move(h); }
  void on_embeddings(Handler h) { embeddings_ = std::move(h); }

  std::vector<httplib::Request> requests() {
    std::lock_guard lock(mutex_);
    return requests_;
  }
  std::size_t request_count() {
    std::lock_guard lock(mutex_);
    return requests_.size();
  }

  static void reply_chat(httplib::Response& res, const std::string& text) {
    Json body{{"choices", Json::array({Json{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}}})}};
    res.set_content(body.dump(), "application/json");
  }

 private:
  void record(const httplib::Request& req) {
    std::lock_guard lock(mutex_);
    requests_.push_back(req);
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::mutex mutex_;
  std::vector<httplib::Request> requests_;
  Handler chat_ = [](const httplib::Request&, httplib::Response& res) { reply_chat(res, "ok"); };
  Handler embeddings_ = [](const httplib::Request&, httplib::Response& res) { res.status = 500; };
};

}  // namespace testing
