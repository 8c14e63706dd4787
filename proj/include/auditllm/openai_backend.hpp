#pragma once

#include <chrono>
#include <string>

#include "auditllm/provider.hpp"

namespace auditllm {

struct EndpointUrl {
  std::string scheme_host_port;  // "http://host:port"
  std::string path_prefix;       // "/v1" or ""
};

/// Splits an endpoint URL into the origin and path prefix.
EndpointUrl parse_endpoint_url(const std::string& url);

/// Client for OpenAI-compatible servers (vLLM, TGI, llama.cpp server, ...).
///
/// Generation: POST {endpoint}/chat/completions with a single user message,
/// text read from choices[0].message.content. Embeddings: POST
/// {endpoint}/embeddings, vectors read from data[i].embedding.
class OpenAiBackend final : public GenerationBackend, public EmbeddingBackend {
 public:
  OpenAiBackend(std::string endpoint_url, std::string wire_model, std::string api_key,
                std::chrono::milliseconds timeout, std::size_t max_batch = 64);

  Completion complete(const std::string& prompt, const GenerationParams& params) override;
  std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) override;
  std::size_t max_batch() const override { return max_batch_; }

  /// Request bodies exactly as sent on the wire.
  static Json chat_request_body(const std::string& wire_model, const std::string& prompt,
                                const GenerationParams& params);
  static Json embedding_request_body(const std::string& wire_model, std::span<const std::string> texts);

 private:
  Json post(const std::string& path, const Json& body);

  std::string endpoint_url_;
  EndpointUrl url_;
  std::string wire_model_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
  std::size_t max_batch_;
};

}  // namespace auditllm
