#pragma once

// Deterministic in-process backends for offline runs and tests.

#include <atomic>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "auditllm/error.hpp"
#include "auditllm/provider.hpp"

namespace auditllm {

struct RecordedRequest {
  std::string prompt;
  GenerationParams params;
};

/// Base for mock generators: records every request and reports a fixed
/// simulated latency so reports stay byte-stable.
class MockModel : public GenerationBackend {
 public:
  Completion complete(const std::string& prompt, const GenerationParams& params) final;

  std::size_t calls() const;
  std::vector<RecordedRequest> requests() const;

 protected:
  virtual std::string reply(const std::string& prompt, const GenerationParams& params,
                            std::size_t call_index) = 0;

 private:
  mutable std::mutex mutex_;
  std::vector<RecordedRequest> log_;
};

/// Returns the prompt unchanged.
class EchoModel final : public MockModel {
 protected:
  std::string reply(const std::string& prompt, const GenerationParams&, std::size_t) override;
};

/// Returns script[k] on the k-th call; the last entry repeats once the
/// script runs out.
class ScriptedModel final : public MockModel {
 public:
  explicit ScriptedModel(std::vector<std::string> script);

 protected:
  std::string reply(const std::string&, const GenerationParams&, std::size_t call_index) override;

 private:
  std::vector<std::string> script_;
};

class ConstantModel final : public MockModel {
 public:
  explicit ConstantModel(std::string text) : text_(std::move(text)) {}

 protected:
  std::string reply(const std::string&, const GenerationParams&, std::size_t) override;

 private:
  std::string text_;
};

/// Stand-in probe generator. Reads the question from the last line that
/// starts with "Question:" and the probe count from the first "exactly N"
/// in the prompt (default 5), then emits a numbered list of N distinct
/// single-sentence rephrasings.
class ParaphraseModel final : public MockModel {
 protected:
  std::string reply(const std::string& prompt, const GenerationParams&, std::size_t) override;
};

/// Always fails with the given error code.
class FailingModel final : public MockModel {
 public:
  explicit FailingModel(ErrorCode code = ErrorCode::transport, std::string message = "mock endpoint unreachable")
      : code_(code), message_(std::move(message)) {}

 protected:
  std::string reply(const std::string&, const GenerationParams&, std::size_t) override;

 private:
  ErrorCode code_;
  std::string message_;
};

/// Forwards to `inner` unless the prompt contains one of `markers`, in
/// which case it throws a transport error.
class FaultInjectingModel final : public GenerationBackend {
 public:
  FaultInjectingModel(std::shared_ptr<GenerationBackend> inner, std::vector<std::string> markers)
      : inner_(std::move(inner)), markers_(std::move(markers)) {}

  Completion complete(const std::string& prompt, const GenerationParams& params) override;
  std::size_t faults() const noexcept { return faults_.load(); }

 private:
  std::shared_ptr<GenerationBackend> inner_;
  std::vector<std::string> markers_;
  std::atomic<std::size_t> faults_{0};
};

/// hash_embed as a backend and as an Embedder, with call accounting.
class HashEmbedder final : public EmbeddingBackend, public Embedder {
 public:
  explicit HashEmbedder(std::size_t dim = 256, std::size_t max_batch = 64);

  std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) override;
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  std::size_t max_batch() const override { return max_batch_; }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t calls() const noexcept { return calls_.load(); }
  std::size_t texts_embedded() const noexcept { return texts_.load(); }

 private:
  std::size_t dim_;
  std::size_t max_batch_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> texts_{0};
};

/// Maps exact texts to fixed vectors (normalized on output). Unknown texts
/// throw Error(invalid_argument).
class LookupEmbedder final : public EmbeddingBackend, public Embedder {
 public:
  explicit LookupEmbedder(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}

  std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) override;
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  std::size_t texts_embedded() const noexcept { return texts_.load(); }

 private:
  std::map<std::string, std::vector<double>> table_;
  std::atomic<std::size_t> texts_{0};
};

}  // namespace auditllm
