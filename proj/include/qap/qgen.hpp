#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qap/corpus.hpp"
#include "qap/numerics.hpp"

namespace qap {

struct GeneratorConfig {
  int questions_per_passage = 10;
  double nucleus_p = 0.6;
  double cloze_drop_prob = 0.2;
  bool unique_answers = false;  // dedupe candidates by answer text
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedQA {
  std::string passage_id;
  std::string qid;
  TokenSequence question;
  std::string answer_text;
  std::optional<Span> answer_span;
};

// Restrict a distribution to the smallest descending-probability prefix with
// cumulative mass >= p (ties to the lower index), then renormalize.
ProbabilityVector nucleus_filter(const ProbabilityVector& probs, double p);

// Template questions over capitalized runs, numeric tokens, and nucleus-
// sampled content positions. Deterministic given config.seed and passage.id.
std::vector<GeneratedQA> generate_rule_based(const Passage& passage,
                                             const Vocabulary& vocab,
                                             const GeneratorConfig& config);

// Pseudo-questions: the span's sentence with the span replaced by [BLANK]
// and every other token independently dropped with cloze_drop_prob.
std::vector<GeneratedQA> generate_cloze_noise(const Passage& passage,
                                              const Vocabulary& vocab,
                                              const GeneratorConfig& config);

// Sentence boundaries over raw tokens: a sentence ends at '.', '!' or '?'.
// Returned pairs are [first, last] inclusive raw-token index ranges.
std::vector<std::pair<int, int>> split_sentences(
    const std::vector<std::string>& raw_tokens);

}  // namespace qap
