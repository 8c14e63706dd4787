#include "auditllm/openai_backend.hpp"

#include <httplib.h>

#include "auditllm/error.hpp"

namespace auditllm {

namespace {

constexpr std::size_t kBodyExcerpt = 200;

std::string excerpt(const std::string& body) {
  return body.size() <= kBodyExcerpt ? body : body.substr(0, kBodyExcerpt) + "...";
}

}  // namespace

EndpointUrl parse_endpoint_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::config_invalid, "endpoint url lacks a scheme", url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  EndpointUrl out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = url;
  } else {
    out.scheme_host_port = url.substr(0, path_start);
    out.path_prefix = url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  }
  return out;
}

OpenAiBackend::OpenAiBackend(std::string endpoint_url, std::string wire_model, std::string api_key,
                             std::chrono::milliseconds timeout, std::size_t max_batch)
    : endpoint_url_(std::move(endpoint_url)),
      url_(parse_endpoint_url(endpoint_url_)),
      wire_model_(std::move(wire_model)),
      api_key_(std::move(api_key)),
      timeout_(timeout),
      max_batch_(max_batch == 0 ? 1 : max_batch) {}

Json OpenAiBackend::chat_request_body(const std::string& wire_model, const std::string& prompt,
                                      const GenerationParams& params) {
  Json body = {{"model", wire_model},
               {"messages", Json::array({Json{{"role", "user"}, {"content", prompt}}})},
               {"temperature", params.temperature},
               {"max_tokens", params.max_length}};
  if (params.seed) body["seed"] = *params.seed;
  return body;
}

Json OpenAiBackend::embedding_request_body(const std::string& wire_model, std::span<const std::string> texts) {
  return {{"model", wire_model}, {"input", Json(std::vector<std::string>(texts.begin(), texts.end()))}};
}

Json OpenAiBackend::post(const std::string& path, const Json& body) {
  httplib::Client client(url_.scheme_host_port);
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - seconds);
  client.set_connection_timeout(seconds.count(), micros.count());
  client.set_read_timeout(seconds.count(), micros.count());
  client.set_write_timeout(seconds.count(), micros.count());
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto started = std::chrono::steady_clock::now();
  auto result = client.Post(url_.path_prefix + path, headers, body.dump(), "application/json");
  if (!result) {
    const auto elapsed = std::chrono::steady_clock::now() - started;
    const auto err = result.error();
    const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                           (err == httplib::Error::Read && elapsed >= timeout_ * 9 / 10);
    throw Error(timed_out ? ErrorCode::timeout : ErrorCode::transport,
                timed_out ? "request timed out" : "transport failure: " + httplib::to_string(err),
                endpoint_url_);
  }
  if (result->status >= 400) {
    throw Error(ErrorCode::endpoint_status, "endpoint returned status " + std::to_string(result->status),
                endpoint_url_ + ": " + excerpt(result->body), static_cast<std::size_t>(result->status));
  }
  try {
    return Json::parse(result->body);
  } catch (const Json::exception&) {
    throw Error(ErrorCode::endpoint_status, "endpoint returned malformed JSON",
                endpoint_url_ + ": " + excerpt(result->body), static_cast<std::size_t>(result->status));
  }
}

Completion OpenAiBackend::complete(const std::string& prompt, const GenerationParams& params) {
  const auto reply = post("/chat/completions", chat_request_body(wire_model_, prompt, params));
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    return {content.is_null() ? std::string() : content.get<std::string>(), std::nullopt};
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::endpoint_status, "completion response lacks choices[0].message.content",
                endpoint_url_ + ": " + e.what());
  }
}

std::vector<std::vector<double>> OpenAiBackend::embed_raw(std::span<const std::string> texts) {
  const auto reply = post("/embeddings", embedding_request_body(wire_model_, texts));
  try {
    const auto& data = reply.at("data");
    if (data.size() != texts.size()) {
      throw Error(ErrorCode::dimension_mismatch, "embedding count differs from input count", endpoint_url_);
    }
    std::vector<std::vector<double>> out(texts.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t slot = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
      if (slot >= out.size() || !out[slot].empty()) {
        throw Error(ErrorCode::endpoint_status, "embedding response has bad index", endpoint_url_);
      }
      data[i].at("embedding").get_to(out[slot]);
    }
    return out;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::endpoint_status, "embedding response lacks data[i].embedding",
                endpoint_url_ + ": " + e.what());
  }
}

}  // namespace auditllm
