#pragma once

// Uniform access to text-generation and embedding endpoints.
//
// A Gateway owns one backend per configured model and mediates every call:
// model resolution, the per-provider in-flight cap, retries with
// exponential backoff on transport errors, and embedding normalization.

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "auditllm/core.hpp"

namespace auditllm {

inline constexpr std::string_view kDefaultEmbeddingModel = "all-mpnet-base-v2";

enum class ModelKind { generation, embedding };

std::string_view to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view text);

struct ModelDescriptor {
  std::string model_id;
  std::string display_name;
  std::string endpoint_url;
  ModelKind kind = ModelKind::generation;

  bool operator==(const ModelDescriptor&) const = default;
};

void to_json(Json& j, const ModelDescriptor& d);

/// One model entry of the configuration file.
struct ModelConfig {
  ModelDescriptor descriptor;
  /// Name of the environment variable holding the API key; never the key.
  std::string api_key_env;
  /// Model name sent on the wire; defaults to the model_id.
  std::string wire_model;
  std::size_t max_batch = 64;
  /// Extra settings for mock:// backends (script, text, dim, fail_on).
  Json options = Json::object();
};

struct GatewayOptions {
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds timeout{120'000};
  int retries = 2;
  std::chrono::milliseconds backoff_base{500};
};

struct GatewayConfig {
  std::vector<ModelConfig> models;
  std::string probe_generator;
  std::string embedding_model{kDefaultEmbeddingModel};
  std::optional<std::filesystem::path> template_path;
  GatewayOptions options;

  /// Parses the JSON configuration document. Structural problems throw
  /// Error(config_invalid); duplicate ids are reported by validate().
  static GatewayConfig parse(std::string_view text);
  static GatewayConfig load(const std::filesystem::path& path);

  /// Throws Error(config_invalid) when two models share a model_id.
  void validate() const;
};

/// Configured generation models in file order. Never touches the network.
std::vector<ModelDescriptor> list_models(const GatewayConfig& config);

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }

  /// L2-normalizes `values`; an all-zero input maps to the basis vector e0.
  static EmbeddingVector normalized(std::vector<double> values);
  static EmbeddingVector basis(std::size_t dim, std::size_t axis);

  bool operator==(const EmbeddingVector&) const = default;
};

/// 64-bit FNV-1a. Stable across runs and platforms.
std::uint64_t stable_hash(std::string_view bytes) noexcept;

/// Deterministic hashed bag-of-words embedding. Tokens are maximal runs of
/// ASCII alphanumerics (bytes >= 0x80 count as token characters so UTF-8
/// words stay whole), lowercased; each token bumps bucket
/// stable_hash(token) % dim. Requires dim >= 8.
EmbeddingVector hash_embed(std::string_view text, std::size_t dim);

struct Completion {
  std::string text;
  /// Set by backends that report their own latency (mocks report a fixed
  /// simulated value); otherwise the gateway measures wall time.
  std::optional<std::int64_t> latency_ms;
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual Completion complete(const std::string& prompt, const GenerationParams& params) = 0;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) = 0;
  virtual std::size_t max_batch() const { return 64; }
};

/// What the similarity engine consumes: one unit vector per input text.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
};

struct ProviderContext {
  std::string api_key;
  std::chrono::milliseconds timeout{120'000};
};

/// Builds the backend named by a model's endpoint_url: http(s):// for
/// OpenAI-compatible servers, mock:// for the in-process test doubles.
std::shared_ptr<GenerationBackend> make_generation_backend(const ModelConfig& model,
                                                           const ProviderContext& context);
std::shared_ptr<EmbeddingBackend> make_embedding_backend(const ModelConfig& model,
                                                         const ProviderContext& context);

class Semaphore {
 public:
  explicit Semaphore(std::size_t permits) : permits_(permits) {}
  void acquire();
  void release();

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t permits_;
};

class Gateway {
 public:
  /// Empty gateway; models are added with register_*.
  explicit Gateway(GatewayOptions options = {});
  /// Validates the configuration and instantiates a backend per model.
  explicit Gateway(const GatewayConfig& config);

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void register_generator(ModelDescriptor descriptor, std::shared_ptr<GenerationBackend> backend);
  void register_embedder(ModelDescriptor descriptor, std::shared_ptr<EmbeddingBackend> backend);

  std::vector<ModelDescriptor> list_models() const;
  bool has_generator(std::string_view model_id) const;
  const ModelDescriptor& descriptor(std::string_view model_id) const;

  std::string generate_text(std::string_view model_id, const std::string& prompt,
                            const GenerationParams& params);
  /// Like generate_text but also reports latency.
  Completion generate(std::string_view model_id, const std::string& prompt,
                      const GenerationParams& params);

  std::vector<EmbeddingVector> embed_texts(std::string_view model_id,
                                           std::span<const std::string> texts);

  /// Embedder view bound to one embedding model of this gateway.
  std::shared_ptr<Embedder> embedder(std::string model_id);

  const GatewayOptions& options() const noexcept { return options_; }
  const std::string& probe_generator() const noexcept { return probe_generator_; }
  const std::string& embedding_model() const noexcept { return embedding_model_; }
  void set_probe_generator(std::string model_id) { probe_generator_ = std::move(model_id); }
  void set_embedding_model(std::string model_id) { embedding_model_ = std::move(model_id); }

 private:
  struct Entry {
    ModelDescriptor descriptor;
    std::shared_ptr<GenerationBackend> generator;
    std::shared_ptr<EmbeddingBackend> embedder;
    std::unique_ptr<Semaphore> in_flight;
  };

  Entry& entry(std::string_view model_id, ModelKind kind);
  void add(Entry entry);
  template <typename Call>
  auto with_retries(Entry& entry, Call&& call) -> decltype(call());

  GatewayOptions options_;
  std::vector<std::string> order_;
  std::map<std::string, Entry, std::less<>> entries_;
  std::string probe_generator_;
  std::string embedding_model_{kDefaultEmbeddingModel};
};

}  // namespace auditllm
