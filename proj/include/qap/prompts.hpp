#pragma once

#include <map>
#include <string>
#include <vector>

#include "qap/student.hpp"

namespace qap {

// Ordered BIO tags: O first, then B-x/I-x per entity type.
struct TagSet {
  std::vector<std::string> tags;

  static TagSet from_entity_types(const std::vector<std::string>& types);
  int size() const { return static_cast<int>(tags.size()); }
  int index_of(const std::string& tag) const;  // -1 when absent
  std::vector<std::string> entity_types() const;
  void validate() const;
};

// Entity type (and "O") -> question tokens. B-x and I-x share a question.
using PromptMap = std::map<std::string, TokenSequence>;

PromptMap load_ner_prompts(const std::string& path, const Vocabulary& vocab);

// Rows of the T x d output matrix: unit-normalized f_start of the tag's
// question. B-x and I-x rows are identical at init.
Matrix init_output_from_prompts(const StudentModel& model, const TagSet& tags,
                                const PromptMap& prompts);

Matrix random_output_matrix(const TagSet& tags, int d, std::uint64_t seed);

// Per-token tag log-probabilities (L x T); the [BOS] row is forced to O.
Matrix ner_forward(const Matrix& reps, const Matrix& output_matrix);

struct NerExample {
  TokenSequence tokens;
  std::vector<int> tags;  // aligned with positions 1..L-1
};

std::vector<NerExample> load_ner_jsonl(const std::string& path,
                                       const Vocabulary& vocab,
                                       const TagSet& tags);
void save_ner_jsonl(const std::string& path,
                    const std::vector<NerExample>& examples,
                    const Vocabulary& vocab, const TagSet& tags);

// Rejects unknown tags and orphan I-x sequences.
void validate_bio(const std::vector<int>& tags, const TagSet& tag_set);

struct NerTrainOptions {
  int epochs = 20;
  double lr = 3e-4;
  std::uint64_t seed = 0;
};

// Full-batch training of encoder + output matrix on per-token log loss.
// Returns the per-epoch mean token loss (entry 0 is the starting loss).
std::vector<double> train_ner(StudentModel& model, Matrix& output_matrix,
                              const std::vector<NerExample>& data,
                              const NerTrainOptions& opts);

std::vector<int> ner_predict_tags(const StudentModel& model,
                                  const Matrix& output_matrix,
                                  const TokenSequence& tokens);

struct Entity {
  std::string type;
  int start = 0;  // token offsets within the tag sequence
  int end = 0;

  bool operator==(const Entity&) const = default;
};

// Total over arbitrary tag sequences: orphan I-x is repaired to B-x.
std::vector<Entity> bio_decode(const std::vector<std::string>& tags);
std::vector<std::string> bio_encode(const std::vector<Entity>& entities,
                                    int length);

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PrfScores entity_f1(const std::vector<Entity>& pred,
                    const std::vector<Entity>& gold);

// A pair of questions acting as a zero-shot sentiment prompt.
struct SentimentPrompt {
  TokenSequence negative;  // label 0
  TokenSequence positive;  // label 1
};

std::vector<SentimentPrompt> load_sentiment_prompts(const std::string& path,
                                                    const Vocabulary& vocab);

struct ContentFreeWords {
  std::string id;
  std::vector<std::string> words;
};

ContentFreeWords load_content_free_words(const std::string& path);

// max_i r(x)_i . f_start(q) + max_i r(x)_i . f_end(q), max over every
// position including 0.
double sentiment_score(const StudentModel& model, const TokenSequence& x,
                       const TokenSequence& q);

struct CalibrationConstants {
  double c0 = 0.0;
  double c1 = 0.0;
  std::string word_list_id;
};

CalibrationConstants compute_calibration(const StudentModel& model,
                                         const SentimentPrompt& prompt,
                                         const ContentFreeWords& words,
                                         const Vocabulary& vocab);

// argmax_y of S(x, q_y) - C_y; exact ties resolve to label 0. The margin is
// calibrated positive score minus calibrated negative score.
std::pair<int, double> predict_sentiment(const StudentModel& model,
                                         const TokenSequence& x,
                                         const SentimentPrompt& prompt,
                                         const CalibrationConstants& calib);

// Highest-scoring span of at most max_tokens under f_start + f_end, never
// covering position 0; ties to smaller (i, j).
std::pair<Span, std::string> extract_rationale(const StudentModel& model,
                                               const Vocabulary& vocab,
                                               const TokenSequence& x,
                                               const TokenSequence& question,
                                               int max_tokens = 5);

struct SentimentExample {
  TokenSequence tokens;
  int label = 0;
};

std::vector<SentimentExample> load_sentiment_jsonl(const std::string& path,
                                                   const Vocabulary& vocab);
void save_sentiment_jsonl(const std::string& path,
                          const std::vector<SentimentExample>& examples,
                          const Vocabulary& vocab);

}  // namespace qap
