#include "auditllm/probe.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "auditllm/error.hpp"

namespace auditllm {

namespace {

constexpr std::array<std::string_view, 4> kPlaceholders = {"{question}", "{n_probes}", "{relevance_score}",
                                                           "{diversity_score}"};

constexpr std::string_view kBuiltinTemplate =
    "You are helping audit a language model for consistency.\n"
    "Rewrite the question below into exactly {n_probes} different probes that ask for the same information.\n"
    "Relevance: keep every probe faithful to the meaning of the original question at a level of "
    "{relevance_score} out of 10.\n"
    "Diversity: vary the wording and sentence structure across the probes at a level of {diversity_score} "
    "out of 10.\n"
    "Answer with a numbered list, one probe per line, formatted as \"1. <probe>\", and nothing else.\n"
    "\n"
    "Question: {question}\n";

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) {
    ++count;
  }
  return count;
}

void check_range(int value, int lo, int hi, const char* name) {
  if (value < lo || value > hi) {
    throw Error(ErrorCode::parameter_out_of_range,
                std::string(name) + " must be in [" + std::to_string(lo) + "," + std::to_string(hi) + "]",
                std::to_string(value));
  }
}

bool is_blank(char c) { return c == ' ' || c == '\t'; }

std::string fold(std::string_view text) {
  auto out = trim(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Returns the item body when `line` carries a list marker.
std::optional<std::string> marked_body(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && is_blank(line[i])) ++i;
  std::size_t body_start = std::string_view::npos;
  if (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
    std::size_t j = i;
    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    if (j < line.size() && (line[j] == '.' || line[j] == ')')) body_start = j + 1;
  } else if (i < line.size() && (line[i] == '-' || line[i] == '*')) {
    body_start = i + 1;
  } else if (line.substr(i, 3) == "\xE2\x80\xA2") {  // U+2022 bullet
    body_start = i + 3;
  }
  if (body_start == std::string_view::npos || body_start >= line.size() || !is_blank(line[body_start])) {
    return std::nullopt;
  }
  auto body = trim(line.substr(body_start));
  if (body.empty()) return std::nullopt;
  return body;
}

/// A marker with nothing after it ("3.", "-"): an empty list item.
bool bare_marker(std::string_view line) {
  const auto t = trim(line);
  if (t == "-" || t == "*" || t == "\xE2\x80\xA2") return true;
  if (t.size() < 2 || (t.back() != '.' && t.back() != ')')) return false;
  return std::all_of(t.begin(), t.end() - 1, [](unsigned char c) { return std::isdigit(c) != 0; });
}

}  // namespace

ProbeTemplate::ProbeTemplate(std::string body) : body_(std::move(body)) {
  for (auto placeholder : kPlaceholders) {
    const auto count = count_occurrences(body_, placeholder);
    if (count != 1) {
      throw Error(ErrorCode::template_invalid,
                  count == 0 ? "template is missing a placeholder" : "template repeats a placeholder",
                  std::string(placeholder));
    }
  }
}

ProbeTemplate ProbeTemplate::builtin() { return ProbeTemplate(std::string(kBuiltinTemplate)); }

ProbeTemplate ProbeTemplate::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::template_invalid, "cannot read template file", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ProbeTemplate(buffer.str());
}

std::string render_probe_prompt(const ProbeTemplate& tmpl, const AuditQuestion& question, int n, int relevance,
                                int diversity) {
  question.validate();
  if (n < 2) throw Error(ErrorCode::parameter_out_of_range, "n must be >= 2", std::to_string(n));
  check_range(relevance, kMinScale, kMaxScale, "relevance");
  check_range(diversity, kMinScale, kMaxScale, "diversity");

  const std::array<std::string, 4> values = {question.text, std::to_string(n), std::to_string(relevance),
                                             std::to_string(diversity)};
  const auto& body = tmpl.body();
  std::string out;
  out.reserve(body.size() + question.text.size());
  std::size_t pos = 0;
  while (pos < body.size()) {
    bool replaced = false;
    if (body[pos] == '{') {
      for (std::size_t k = 0; k < kPlaceholders.size(); ++k) {
        if (body.compare(pos, kPlaceholders[k].size(), kPlaceholders[k]) == 0) {
          out += values[k];
          pos += kPlaceholders[k].size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += body[pos++];
  }
  return out;
}

std::string format_reminder(int n) {
  return "\n\nReturn exactly " + std::to_string(n) +
         " probes as a numbered list, one per line, formatted as \"1. <probe>\", with no other text.";
}

std::vector<std::string> parse_probe_list(std::string_view raw, int n) {
  if (n < 2) throw Error(ErrorCode::parameter_out_of_range, "n must be >= 2", std::to_string(n));
  const auto wanted = static_cast<std::size_t>(n);

  std::vector<std::string> lines;
  std::vector<std::string> marked;
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto end = raw.find('\n', start);
    if (end == std::string_view::npos) end = raw.size();
    auto line = raw.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!trim(line).empty()) {
      lines.emplace_back(line);
      if (auto body = marked_body(line)) marked.push_back(std::move(*body));
    }
    start = end + 1;
  }

  std::vector<std::string> items;
  if (marked.size() >= wanted) {
    items.assign(marked.begin(), marked.begin() + static_cast<std::ptrdiff_t>(wanted));
  } else if (lines.size() == wanted && std::none_of(lines.begin(), lines.end(), bare_marker)) {
    for (const auto& line : lines) {
      auto body = marked_body(line);
      items.push_back(body ? std::move(*body) : trim(line));
    }
  } else {
    throw Error(ErrorCode::parse_shortfall,
                "found " + std::to_string(marked.size()) + " of " + std::to_string(n) + " probes", {},
                marked.size());
  }

  std::set<std::string> seen;
  for (const auto& item : items) {
    if (!seen.insert(fold(item)).second) throw Error(ErrorCode::duplicate_probe, "duplicate probe", item);
  }
  return items;
}

ProbeSet generate_probes(Gateway& gateway, std::string_view generator_model, const ProbeTemplate& tmpl,
                         const ProbeRequest& request) {
  const auto prompt =
      render_probe_prompt(tmpl, request.question, request.n, request.relevance, request.diversity);
  const auto params = GenerationParams::generator_default();

  for (int attempt = 1;; ++attempt) {
    const auto text = gateway.generate_text(generator_model, attempt == 1 ? prompt : prompt + format_reminder(request.n), params);
    try {
      ProbeSet set{request.question, parse_probe_list(text, request.n), request.relevance, request.diversity,
                   request.n};
      set.validate();
      return set;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::parse_shortfall && e.code() != ErrorCode::duplicate_probe) throw;
      if (attempt >= kProbeGenerationAttempts) {
        throw Error(ErrorCode::probe_generation_failed,
                    "probe generation failed after " + std::to_string(attempt) + " attempts",
                    std::string(to_string(e.code())) + ": " + e.what(), e.count());
      }
    }
  }
}

}  // namespace auditllm
