#pragma once

// Sentence segmentation and sentence-level greedy alignment scoring.
//
// Responses are split into sentences, every sentence is embedded once, and
// two responses are compared the way BERTScore compares tokens: each
// sentence is matched to its most similar counterpart on the other side.
// Precision averages the best matches of the first response, recall those
// of the second, and F is their harmonic mean. Negative cosines count as 0.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "auditllm/core.hpp"
#include "auditllm/provider.hpp"

namespace auditllm {

struct Sentence {
  std::size_t start = 0;  // code point offset, inclusive
  std::size_t end = 0;    // code point offset, exclusive
  std::string text;

  bool operator==(const Sentence&) const = default;
};

struct SegmentedText {
  std::string original;
  std::vector<Sentence> sentences;
};

/// Rule-based splitter. A sentence ends at a run of `.`, `!` or `?`
/// (plus any closing quotes/brackets) that is followed by whitespace and
/// then an uppercase letter or digit, or by the end of the text. A lone
/// `.` closing a known abbreviation ("e.g.", "Dr.", "vs.") does not end a
/// sentence; decimals never do because no whitespace follows the point.
SegmentedText segment_sentences(std::string_view text);

/// Dot product of two unit vectors, clamped to [-1,1].
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

struct SimilarityScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Greedy best-match scoring over precomputed sentence embeddings.
SimilarityScore greedy_match(std::span<const EmbeddingVector> a, std::span<const EmbeddingVector> b);

/// Throws Error(empty_text) if either side has no sentences.
SimilarityScore response_similarity(const SegmentedText& a, const SegmentedText& b, Embedder& embedder);

/// Cross pairs with cosine >= threshold, sorted by descending score, then
/// by (sentence_a, sentence_b).
std::vector<SentencePairScore> highlight_pairs(const SegmentedText& a, const SegmentedText& b,
                                               Embedder& embedder, double threshold,
                                               std::size_t response_a = 0, std::size_t response_b = 1);

struct ConsistencyResult {
  /// Keyed by position in the input list unless explicit ids were given.
  std::map<ResponsePair, double> pairwise;
  double score = 0.0;
  std::vector<SentencePairScore> highlights;
};

/// Mean pairwise F over all unordered response pairs. Each sentence is
/// embedded exactly once per call.
ConsistencyResult consistency_score(std::span<const SegmentedText> responses, Embedder& embedder);

/// consistency_score plus highlight extraction in the same embedding pass.
/// `ids` label the responses (strictly increasing; probe indices in a report).
ConsistencyResult score_responses(std::span<const SegmentedText> responses, std::span<const std::size_t> ids,
                                  Embedder& embedder, double threshold);

/// Orders highlights: descending score, then (response_a, sentence_a,
/// response_b, sentence_b).
void sort_highlights(std::vector<SentencePairScore>& highlights);

}  // namespace auditllm
