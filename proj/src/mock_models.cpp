#include "auditllm/mock_models.hpp"

#include <array>
#include <cctype>
#include <regex>
#include <sstream>

namespace auditllm {

Completion MockModel::complete(const std::string& prompt, const GenerationParams& params) {
  std::size_t index = 0;
  {
    std::lock_guard lock(mutex_);
    index = log_.size();
    log_.push_back({prompt, params});
  }
  return {reply(prompt, params, index), 0};
}

std::size_t MockModel::calls() const {
  std::lock_guard lock(mutex_);
  return log_.size();
}

std::vector<RecordedRequest> MockModel::requests() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::string EchoModel::reply(const std::string& prompt, const GenerationParams&, std::size_t) {
  return prompt;
}

ScriptedModel::ScriptedModel(std::vector<std::string> script) : script_(std::move(script)) {
  if (script_.empty()) throw Error(ErrorCode::invalid_argument, "scripted model needs at least one reply");
}

std::string ScriptedModel::reply(const std::string&, const GenerationParams&, std::size_t call_index) {
  return script_[std::min(call_index, script_.size() - 1)];
}

std::string ConstantModel::reply(const std::string&, const GenerationParams&, std::size_t) { return text_; }

namespace {

constexpr std::array<std::string_view, 8> kLeadIns = {
    "Can you explain",
    "In simple terms,",
    "I would like to know:",
    "Please clarify for a curious student,",
    "Briefly,",
    "From a scientific point of view,",
    "Could you tell me",
    "What is the answer to this question:",
};

std::string question_core(std::string question) {
  question = trim(question);
  while (!question.empty() && (question.back() == '?' || question.back() == '.' || question.back() == '!')) {
    question.pop_back();
  }
  if (question.size() > 1 && std::isupper(static_cast<unsigned char>(question[0])) &&
      std::islower(static_cast<unsigned char>(question[1]))) {
    question[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(question[0])));
  }
  return question;
}

}  // namespace

std::string ParaphraseModel::reply(const std::string& prompt, const GenerationParams&, std::size_t) {
  std::string question;
  std::istringstream lines(prompt);
  for (std::string line; std::getline(lines, line);) {
    auto stripped = trim(line);
    if (stripped.rfind("Question:", 0) == 0) question = trim(stripped.substr(9));
  }
  if (question.empty()) question = trim(prompt);

  std::size_t n = kDefaultProbeCount;
  std::smatch match;
  static const std::regex count_pattern(R"(exactly\s+(\d+))");
  if (std::regex_search(prompt, match, count_pattern)) n = std::stoul(match[1].str());

  const auto core = question_core(question);
  std::ostringstream out;
  for (std::size_t i = 0; i < n; ++i) {
    out << (i + 1) << ". " << kLeadIns[i % kLeadIns.size()] << ' ' << core;
    if (i >= kLeadIns.size()) out << " in variant " << (i / kLeadIns.size() + 1);
    out << "?\n";
  }
  return out.str();
}

std::string FailingModel::reply(const std::string&, const GenerationParams&, std::size_t) {
  throw Error(code_, message_);
}

Completion FaultInjectingModel::complete(const std::string& prompt, const GenerationParams& params) {
  for (const auto& marker : markers_) {
    if (prompt.find(marker) != std::string::npos) {
      ++faults_;
      throw Error(ErrorCode::transport, "injected fault", marker);
    }
  }
  return inner_->complete(prompt, params);
}

HashEmbedder::HashEmbedder(std::size_t dim, std::size_t max_batch) : dim_(dim), max_batch_(max_batch) {
  if (dim_ < 8) throw Error(ErrorCode::parameter_out_of_range, "hash embedder dim must be >= 8");
  if (max_batch_ == 0) throw Error(ErrorCode::parameter_out_of_range, "max_batch must be positive");
}

std::vector<std::vector<double>> HashEmbedder::embed_raw(std::span<const std::string> texts) {
  ++calls_;
  texts_ += texts.size();
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) out.push_back(hash_embed(text, dim_).values);
  return out;
}

std::vector<EmbeddingVector> HashEmbedder::embed(std::span<const std::string> texts) {
  ++calls_;
  texts_ += texts.size();
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) out.push_back(hash_embed(text, dim_));
  return out;
}

std::vector<std::vector<double>> LookupEmbedder::embed_raw(std::span<const std::string> texts) {
  texts_ += texts.size();
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    auto it = table_.find(text);
    if (it == table_.end()) throw Error(ErrorCode::invalid_argument, "no vector registered for text", text);
    out.push_back(it->second);
  }
  return out;
}

std::vector<EmbeddingVector> LookupEmbedder::embed(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  for (auto& raw : embed_raw(texts)) out.push_back(EmbeddingVector::normalized(std::move(raw)));
  return out;
}

}  // namespace auditllm
