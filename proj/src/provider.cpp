#include "auditllm/provider.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "auditllm/error.hpp"
#include "auditllm/mock_models.hpp"
#include "auditllm/openai_backend.hpp"

namespace auditllm {

std::string_view to_string(ModelKind kind) noexcept {
  return kind == ModelKind::generation ? "generation" : "embedding";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "generation") return ModelKind::generation;
  if (text == "embedding") return ModelKind::embedding;
  throw Error(ErrorCode::config_invalid, "unknown model kind", std::string(text));
}

void to_json(Json& j, const ModelDescriptor& d) {
  j = Json{{"model_id", d.model_id},
           {"display_name", d.display_name},
           {"endpoint_url", d.endpoint_url},
           {"kind", to_string(d.kind)}};
}

GatewayConfig GatewayConfig::parse(std::string_view text) {
  GatewayConfig config;
  try {
    const auto doc = Json::parse(text);
    if (!doc.is_object()) throw Error(ErrorCode::config_invalid, "configuration must be a JSON object");
    for (const auto& item : doc.value("models", Json::array())) {
      ModelConfig model;
      model.descriptor.model_id = item.at("id").get<std::string>();
      model.descriptor.display_name = item.value("display_name", model.descriptor.model_id);
      model.descriptor.endpoint_url = item.at("url").get<std::string>();
      model.descriptor.kind = parse_model_kind(item.value("kind", std::string("generation")));
      model.api_key_env = item.value("api_key_env", std::string());
      model.wire_model = item.value("wire_model", model.descriptor.model_id);
      model.max_batch = item.value("max_batch", std::size_t{64});
      model.options = item.value("options", Json::object());
      if (model.descriptor.model_id.empty()) throw Error(ErrorCode::config_invalid, "model id is empty");
      if (item.contains("api_key")) {
        throw Error(ErrorCode::config_invalid, "API keys must come from api_key_env, not the file",
                    model.descriptor.model_id);
      }
      config.models.push_back(std::move(model));
    }
    config.probe_generator = doc.value("probe_generator", std::string("mistral-7b"));
    config.embedding_model = doc.value("embedding_model", std::string(kDefaultEmbeddingModel));
    if (doc.contains("template")) config.template_path = doc.at("template").get<std::string>();
    config.options.max_in_flight = doc.value("max_in_flight", config.options.max_in_flight);
    config.options.timeout = std::chrono::milliseconds(doc.value("timeout_ms", config.options.timeout.count()));
    config.options.retries = doc.value("retries", config.options.retries);
    config.options.backoff_base =
        std::chrono::milliseconds(doc.value("backoff_ms", config.options.backoff_base.count()));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::config_invalid, "malformed configuration", e.what());
  }
  if (config.options.max_in_flight == 0) {
    throw Error(ErrorCode::config_invalid, "max_in_flight must be positive");
  }
  if (config.options.retries < 0) throw Error(ErrorCode::config_invalid, "retries must be >= 0");
  return config;
}

GatewayConfig GatewayConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::config_invalid, "cannot read configuration file", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  auto config = parse(buffer.str());
  if (config.template_path && config.template_path->is_relative()) {
    config.template_path = path.parent_path() / *config.template_path;
  }
  return config;
}

void GatewayConfig::validate() const {
  std::set<std::string> seen;
  for (const auto& model : models) {
    if (!seen.insert(model.descriptor.model_id).second) {
      throw Error(ErrorCode::config_invalid, "duplicate model_id in configuration", model.descriptor.model_id);
    }
  }
}

std::vector<ModelDescriptor> list_models(const GatewayConfig& config) {
  config.validate();
  std::vector<ModelDescriptor> out;
  for (const auto& model : config.models) {
    if (model.descriptor.kind == ModelKind::generation) out.push_back(model.descriptor);
  }
  return out;
}

EmbeddingVector EmbeddingVector::normalized(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::dimension_mismatch, "embedding has zero dimensions");
  double norm_sq = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::dimension_mismatch, "embedding has non-finite component");
    norm_sq += v * v;
  }
  if (norm_sq == 0.0) return basis(values.size(), 0);
  const double norm = std::sqrt(norm_sq);
  for (double& v : values) v /= norm;
  return {std::move(values)};
}

EmbeddingVector EmbeddingVector::basis(std::size_t dim, std::size_t axis) {
  std::vector<double> values(dim, 0.0);
  values.at(axis) = 1.0;
  return {std::move(values)};
}

std::uint64_t stable_hash(std::string_view bytes) noexcept {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

EmbeddingVector hash_embed(std::string_view text, std::size_t dim) {
  if (dim < 8) throw Error(ErrorCode::parameter_out_of_range, "hash_embed dim must be >= 8");
  std::vector<double> counts(dim, 0.0);
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      counts[stable_hash(token) % dim] += 1.0;
      token.clear();
    }
  };
  for (unsigned char c : text) {
    if (c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z')) {
      token.push_back(static_cast<char>(c));
    } else if (c >= 'A' && c <= 'Z') {
      token.push_back(static_cast<char>(c - 'A' + 'a'));
    } else {
      flush();
    }
  }
  flush();
  return EmbeddingVector::normalized(std::move(counts));
}

namespace {

std::string mock_kind(const std::string& url) { return url.substr(std::string("mock://").size()); }

bool is_mock(const std::string& url) { return url.rfind("mock://", 0) == 0; }

std::string api_key_for(const ModelConfig& model) {
  if (model.api_key_env.empty()) return {};
  const char* value = std::getenv(model.api_key_env.c_str());
  return value ? value : "";
}

}  // namespace

std::shared_ptr<GenerationBackend> make_generation_backend(const ModelConfig& model,
                                                           const ProviderContext& context) {
  const auto& url = model.descriptor.endpoint_url;
  if (is_mock(url) && model.options.contains("fail_on")) {
    auto inner_config = model;
    inner_config.options.erase("fail_on");
    return std::make_shared<FaultInjectingModel>(make_generation_backend(inner_config, context),
                                                 model.options.at("fail_on").get<std::vector<std::string>>());
  }
  if (is_mock(url)) {
    const auto kind = mock_kind(url);
    if (kind == "echo") return std::make_shared<EchoModel>();
    if (kind == "paraphrase") return std::make_shared<ParaphraseModel>();
    if (kind == "constant") {
      return std::make_shared<ConstantModel>(model.options.value("text", std::string("The answer is unknown.")));
    }
    if (kind == "script") {
      return std::make_shared<ScriptedModel>(model.options.at("script").get<std::vector<std::string>>());
    }
    if (kind == "fail") return std::make_shared<FailingModel>();
    throw Error(ErrorCode::config_invalid, "unknown mock generation backend", url);
  }
  return std::make_shared<OpenAiBackend>(url, model.wire_model, context.api_key, context.timeout, model.max_batch);
}

std::shared_ptr<EmbeddingBackend> make_embedding_backend(const ModelConfig& model,
                                                         const ProviderContext& context) {
  const auto& url = model.descriptor.endpoint_url;
  if (is_mock(url)) {
    if (mock_kind(url) == "hash") {
      return std::make_shared<HashEmbedder>(model.options.value("dim", std::size_t{256}), model.max_batch);
    }
    throw Error(ErrorCode::config_invalid, "unknown mock embedding backend", url);
  }
  return std::make_shared<OpenAiBackend>(url, model.wire_model, context.api_key, context.timeout, model.max_batch);
}

void Semaphore::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return permits_ > 0; });
  --permits_;
}

void Semaphore::release() {
  {
    std::lock_guard lock(mutex_);
    ++permits_;
  }
  cv_.notify_one();
}

Gateway::Gateway(GatewayOptions options) : options_(options) {}

Gateway::Gateway(const GatewayConfig& config) : options_(config.options) {
  config.validate();
  probe_generator_ = config.probe_generator;
  embedding_model_ = config.embedding_model;
  for (const auto& model : config.models) {
    const ProviderContext context{api_key_for(model), options_.timeout};
    if (model.descriptor.kind == ModelKind::generation) {
      register_generator(model.descriptor, make_generation_backend(model, context));
    } else {
      register_embedder(model.descriptor, make_embedding_backend(model, context));
    }
  }
}

void Gateway::add(Entry entry) {
  const auto id = entry.descriptor.model_id;
  if (entries_.count(id)) throw Error(ErrorCode::config_invalid, "duplicate model_id", id);
  entry.in_flight = std::make_unique<Semaphore>(options_.max_in_flight);
  order_.push_back(id);
  entries_.emplace(id, std::move(entry));
}

void Gateway::register_generator(ModelDescriptor descriptor, std::shared_ptr<GenerationBackend> backend) {
  descriptor.kind = ModelKind::generation;
  add(Entry{std::move(descriptor), std::move(backend), nullptr, nullptr});
}

void Gateway::register_embedder(ModelDescriptor descriptor, std::shared_ptr<EmbeddingBackend> backend) {
  descriptor.kind = ModelKind::embedding;
  add(Entry{std::move(descriptor), nullptr, std::move(backend), nullptr});
}

std::vector<ModelDescriptor> Gateway::list_models() const {
  std::vector<ModelDescriptor> out;
  for (const auto& id : order_) {
    const auto& e = entries_.at(id);
    if (e.descriptor.kind == ModelKind::generation) out.push_back(e.descriptor);
  }
  return out;
}

bool Gateway::has_generator(std::string_view model_id) const {
  auto it = entries_.find(model_id);
  return it != entries_.end() && it->second.descriptor.kind == ModelKind::generation;
}

const ModelDescriptor& Gateway::descriptor(std::string_view model_id) const {
  auto it = entries_.find(model_id);
  if (it == entries_.end()) throw Error(ErrorCode::unknown_model, "unknown model", std::string(model_id));
  return it->second.descriptor;
}

Gateway::Entry& Gateway::entry(std::string_view model_id, ModelKind kind) {
  auto it = entries_.find(model_id);
  if (it == entries_.end() || it->second.descriptor.kind != kind) {
    throw Error(ErrorCode::unknown_model, std::string("unknown ") + std::string(to_string(kind)) + " model",
                std::string(model_id));
  }
  return it->second;
}

template <typename Call>
auto Gateway::with_retries(Entry& e, Call&& call) -> decltype(call()) {
  for (int attempt = 0;; ++attempt) {
    e.in_flight->acquire();
    try {
      auto result = call();
      e.in_flight->release();
      return result;
    } catch (const Error& err) {
      e.in_flight->release();
      if (err.code() == ErrorCode::transport && attempt < options_.retries) {
        std::this_thread::sleep_for(options_.backoff_base * (1 << attempt));
        continue;
      }
      std::string detail = "model " + e.descriptor.model_id + " at " + e.descriptor.endpoint_url;
      if (!err.detail().empty()) detail += ": " + err.detail();
      if (err.code() == ErrorCode::transport) detail += " (after " + std::to_string(attempt) + " retries)";
      throw Error(err.code(), err.what(), std::move(detail), err.count());
    } catch (...) {
      e.in_flight->release();
      throw;
    }
  }
}

Completion Gateway::generate(std::string_view model_id, const std::string& prompt,
                             const GenerationParams& params) {
  params.validate();
  auto& e = entry(model_id, ModelKind::generation);
  const auto started = std::chrono::steady_clock::now();
  auto completion = with_retries(e, [&] { return e.generator->complete(prompt, params); });
  if (!completion.latency_ms) {
    completion.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
  }
  while (!completion.text.empty() && std::isspace(static_cast<unsigned char>(completion.text.back()))) {
    completion.text.pop_back();
  }
  return completion;
}

std::string Gateway::generate_text(std::string_view model_id, const std::string& prompt,
                                   const GenerationParams& params) {
  return generate(model_id, prompt, params).text;
}

std::vector<EmbeddingVector> Gateway::embed_texts(std::string_view model_id, std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::invalid_argument, "embed_texts needs at least one text");
  for (const auto& t : texts) {
    if (t.empty()) throw Error(ErrorCode::invalid_argument, "embed_texts received an empty text");
  }
  auto& e = entry(model_id, ModelKind::embedding);
  const std::size_t batch = std::max<std::size_t>(1, e.embedder->max_batch());
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += batch) {
    const auto chunk = texts.subspan(start, std::min(batch, texts.size() - start));
    auto raw = with_retries(e, [&] { return e.embedder->embed_raw(chunk); });
    if (raw.size() != chunk.size()) {
      throw Error(ErrorCode::dimension_mismatch, "embedding count differs from input count", e.descriptor.model_id);
    }
    for (auto& values : raw) {
      if (!out.empty() && values.size() != out.front().dim()) {
        throw Error(ErrorCode::dimension_mismatch, "endpoint returned inconsistent embedding dimensions",
                    e.descriptor.model_id);
      }
      out.push_back(EmbeddingVector::normalized(std::move(values)));
    }
  }
  return out;
}

namespace {

class GatewayEmbedder final : public Embedder {
 public:
  GatewayEmbedder(Gateway& gateway, std::string model_id) : gateway_(gateway), model_id_(std::move(model_id)) {}

  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
    if (texts.empty()) return {};
    return gateway_.embed_texts(model_id_, texts);
  }

 private:
  Gateway& gateway_;
  std::string model_id_;
};

}  // namespace

std::shared_ptr<Embedder> Gateway::embedder(std::string model_id) {
  entry(model_id, ModelKind::embedding);
  return std::make_shared<GatewayEmbedder>(*this, std::move(model_id));
}

}  // namespace auditllm
