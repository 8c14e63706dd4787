#include "auditllm/similarity.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

#include "auditllm/error.hpp"

namespace auditllm {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t byte_offset;
};

std::vector<CodePoint> decode_utf8(std::string_view text) {
  std::vector<CodePoint> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = lead;
    if (lead >= 0xF0 && lead < 0xF8) {
      len = 4;
      cp = lead & 0x07;
    } else if (lead >= 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if (lead >= 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    }
    if (len > 1) {
      bool valid = i + len <= text.size();
      for (std::size_t k = 1; valid && k < len; ++k) {
        const auto cont = static_cast<unsigned char>(text[i + k]);
        if ((cont & 0xC0) != 0x80) valid = false;
        cp = (cp << 6) | (cont & 0x3F);
      }
      if (!valid) {
        len = 1;
        cp = 0xFFFD;
      }
    }
    out.push_back({cp, i});
    i += len;
  }
  return out;
}

bool is_space(char32_t c) {
  return c == ' ' || (c >= '\t' && c <= '\r') || c == 0x85 || c == 0xA0 || (c >= 0x2000 && c <= 0x200A) ||
         c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x3000;
}

bool is_terminator(char32_t c) { return c == '.' || c == '!' || c == '?'; }

bool is_closer(char32_t c) {
  return c == '"' || c == '\'' || c == ')' || c == ']' || c == 0x2019 || c == 0x201D || c == 0xBB;
}

bool is_opener(char32_t c) { return c == '"' || c == '\'' || c == '(' || c == '[' || c == 0x201C || c == 0x2018; }

bool starts_sentence(char32_t c) {
  return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || (c >= 0xC0 && c <= 0xDE && c != 0xD7) ||
         (c >= 0x391 && c <= 0x3A9) || (c >= 0x410 && c <= 0x42F);
}

constexpr std::array<std::u32string_view, 16> kAbbreviations = {
    U"e.g", U"i.e", U"dr", U"mr", U"mrs", U"ms", U"vs", U"prof", U"st", U"jr", U"sr", U"u.s", U"u.k", U"a.m",
    U"p.m", U"cf"};

/// Whether the word ending just before the `.` at `dot` is an abbreviation.
bool abbreviation_before(const std::vector<CodePoint>& cps, std::size_t dot) {
  std::size_t begin = dot;
  while (begin > 0 && !is_space(cps[begin - 1].value)) --begin;
  while (begin < dot && (is_opener(cps[begin].value))) ++begin;
  std::u32string word;
  for (std::size_t k = begin; k < dot; ++k) {
    char32_t c = cps[k].value;
    if (c >= 'A' && c <= 'Z') c = c - 'A' + 'a';
    word.push_back(c);
  }
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

std::vector<double> floored_best(std::span<const EmbeddingVector> from, std::span<const EmbeddingVector> to) {
  std::vector<double> best(from.size(), 0.0);
  for (std::size_t i = 0; i < from.size(); ++i) {
    double m = 0.0;
    for (const auto& v : to) m = std::max(m, cosine(from[i], v));
    best[i] = m;
  }
  return best;
}

double mean(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

void append_pairs(std::span<const EmbeddingVector> a, std::span<const EmbeddingVector> b, double threshold,
                  std::size_t response_a, std::size_t response_b, std::vector<SentencePairScore>& out) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double score = cosine(a[i], b[j]);
      if (score >= threshold) out.push_back({response_a, i, response_b, j, score});
    }
  }
}

void check_threshold(double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::parameter_out_of_range, "threshold must be in [0,1]");
  }
}

}  // namespace

SegmentedText segment_sentences(std::string_view text) {
  SegmentedText out{std::string(text), {}};
  const auto cps = decode_utf8(text);
  const std::size_t n = cps.size();
  auto byte_at = [&](std::size_t cp_index) { return cp_index < n ? cps[cp_index].byte_offset : text.size(); };
  auto emit = [&](std::size_t start, std::size_t end) {
    const auto b0 = byte_at(start);
    out.sentences.push_back({start, end, std::string(text.substr(b0, byte_at(end) - b0))});
  };

  constexpr auto kNone = static_cast<std::size_t>(-1);
  std::size_t start = kNone;
  for (std::size_t i = 0; i < n; ++i) {
    if (start == kNone && !is_space(cps[i].value)) start = i;
    if (!is_terminator(cps[i].value)) continue;

    std::size_t run_end = i;
    while (run_end + 1 < n && is_terminator(cps[run_end + 1].value)) ++run_end;
    std::size_t close_end = run_end;
    while (close_end + 1 < n && is_closer(cps[close_end + 1].value)) ++close_end;

    bool boundary = false;
    if (close_end + 1 == n) {
      boundary = true;
    } else if (is_space(cps[close_end + 1].value)) {
      std::size_t next = close_end + 1;
      while (next < n && is_space(cps[next].value)) ++next;
      if (next == n) {
        boundary = true;
      } else if (starts_sentence(cps[next].value)) {
        boundary = true;
      } else if (is_opener(cps[next].value) && next + 1 < n && starts_sentence(cps[next + 1].value)) {
        boundary = true;
      }
    }
    if (boundary && run_end == i && cps[i].value == '.' && abbreviation_before(cps, i)) boundary = false;

    if (boundary && start != kNone) {
      emit(start, close_end + 1);
      start = kNone;
      i = close_end;
    } else {
      i = run_end;
    }
  }
  if (start != kNone) {
    std::size_t end = n;
    while (end > start && is_space(cps[end - 1].value)) --end;
    emit(start, end);
  }
  return out;
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dim() != v.dim()) {
    throw Error(ErrorCode::dimension_mismatch, "cosine of vectors with different dimensions",
                std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < u.dim(); ++i) dot += u.values[i] * v.values[i];
  return std::clamp(dot, -1.0, 1.0);
}

SimilarityScore greedy_match(std::span<const EmbeddingVector> a, std::span<const EmbeddingVector> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::empty_text, "cannot score a response without sentences");
  SimilarityScore s;
  s.precision = mean(floored_best(a, b));
  s.recall = mean(floored_best(b, a));
  const double denom = s.precision + s.recall;
  s.f = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  return s;
}

namespace {

/// Embeds every sentence of every text in one call; returns per-text spans
/// into the flat result.
struct EmbeddedTexts {
  std::vector<EmbeddingVector> flat;
  std::vector<std::size_t> offsets;  // size = texts + 1

  std::span<const EmbeddingVector> of(std::size_t t) const {
    return std::span<const EmbeddingVector>(flat).subspan(offsets[t], offsets[t + 1] - offsets[t]);
  }
};

EmbeddedTexts embed_all(std::span<const SegmentedText> texts, Embedder& embedder) {
  std::vector<std::string> sentences;
  EmbeddedTexts out;
  out.offsets.push_back(0);
  for (const auto& t : texts) {
    for (const auto& s : t.sentences) sentences.push_back(s.text);
    out.offsets.push_back(sentences.size());
  }
  if (!sentences.empty()) out.flat = embedder.embed(sentences);
  if (out.flat.size() != sentences.size()) {
    throw Error(ErrorCode::dimension_mismatch, "embedder returned the wrong number of vectors");
  }
  return out;
}

}  // namespace

SimilarityScore response_similarity(const SegmentedText& a, const SegmentedText& b, Embedder& embedder) {
  if (a.sentences.empty() || b.sentences.empty()) {
    throw Error(ErrorCode::empty_text, "cannot score a response without sentences");
  }
  const std::array<SegmentedText, 2> pair = {a, b};
  const auto embedded = embed_all(pair, embedder);
  return greedy_match(embedded.of(0), embedded.of(1));
}

std::vector<SentencePairScore> highlight_pairs(const SegmentedText& a, const SegmentedText& b, Embedder& embedder,
                                               double threshold, std::size_t response_a, std::size_t response_b) {
  check_threshold(threshold);
  std::vector<SentencePairScore> out;
  if (a.sentences.empty() || b.sentences.empty()) return out;
  const std::array<SegmentedText, 2> pair = {a, b};
  const auto embedded = embed_all(pair, embedder);
  append_pairs(embedded.of(0), embedded.of(1), threshold, response_a, response_b, out);
  sort_highlights(out);
  return out;
}

void sort_highlights(std::vector<SentencePairScore>& highlights) {
  std::sort(highlights.begin(), highlights.end(), [](const SentencePairScore& x, const SentencePairScore& y) {
    if (x.score != y.score) return x.score > y.score;
    return std::tie(x.response_a, x.sentence_a, x.response_b, x.sentence_b) <
           std::tie(y.response_a, y.sentence_a, y.response_b, y.sentence_b);
  });
}

ConsistencyResult score_responses(std::span<const SegmentedText> responses, std::span<const std::size_t> ids,
                                  Embedder& embedder, double threshold) {
  check_threshold(threshold);
  if (responses.size() < 2) throw Error(ErrorCode::too_few_responses, "need at least two responses");
  if (ids.size() != responses.size()) throw Error(ErrorCode::invalid_argument, "one id per response required");
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] <= ids[i - 1]) throw Error(ErrorCode::invalid_argument, "response ids must be strictly increasing");
  }
  for (const auto& r : responses) {
    if (r.sentences.empty()) throw Error(ErrorCode::empty_text, "cannot score a response without sentences");
  }

  const auto embedded = embed_all(responses, embedder);
  ConsistencyResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    for (std::size_t j = i + 1; j < responses.size(); ++j) {
      const double f = greedy_match(embedded.of(i), embedded.of(j)).f;
      out.pairwise.emplace(ResponsePair{ids[i], ids[j]}, f);
      sum += f;
      append_pairs(embedded.of(i), embedded.of(j), threshold, ids[i], ids[j], out.highlights);
    }
  }
  out.score = sum / static_cast<double>(out.pairwise.size());
  sort_highlights(out.highlights);
  return out;
}

ConsistencyResult consistency_score(std::span<const SegmentedText> responses, Embedder& embedder) {
  std::vector<std::size_t> ids(responses.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  auto result = score_responses(responses, ids, embedder, 1.0);
  result.highlights.clear();
  return result;
}

}  // namespace auditllm
