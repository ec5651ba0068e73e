#pragma once

#include <string>
#include <vector>

#include "qap/teacher.hpp"

namespace qap {

// Bi-encoder: shared encoder plus start/end question-embedding heads that
// map the question's [BOS] representation to d-vectors.
struct StudentModel {
  EncoderParams encoder;
  MlpHead start_head, end_head;  // d -> d -> d

  std::vector<ParamRef> param_refs();
  std::uint64_t checksum() const;
};

StudentModel init_student(const EncoderConfig& config, std::uint64_t seed);

void save_student_checkpoint(const StudentModel& model, const std::string& path);
StudentModel load_student_checkpoint(const std::string& path,
                                     int expected_vocab_size = -1);

struct QuestionEmbedding {
  Vector f_start;
  Vector f_end;
};

QuestionEmbedding question_embed(const StudentModel& model,
                                 const TokenSequence& q);

// p_start(i) proportional to exp(r(c)_i . f_start), softmax over every
// context position including 0 (the unanswerable slot).
SpanDistributionPair score_passage(const StudentModel& model,
                                   const TokenSequence& c,
                                   const QuestionEmbedding& qe);

// Eq-style distillation objective over the stored sparse entries only.
double distill_loss(const SpanDistributionPair& pred,
                    const SparseSpanLabels& labels);

// Negative log-likelihood of the teacher's argmax start and end.
double hard_label_loss(const SpanDistributionPair& pred,
                       const SparseSpanLabels& labels);

enum class DistillLossKind { soft, hard };

struct TrainBatch {
  TokenSequence passage;
  std::vector<std::pair<TokenSequence, SparseSpanLabels>> questions;
};

struct DistillOptions {
  int epochs = 2;
  double lr = 1e-3;
  DistillLossKind loss = DistillLossKind::soft;
  std::uint64_t seed = 0;
};

struct DistillStats {
  std::vector<double> epoch_mean_loss;  // mean per question
  long passage_encodes = 0;             // instrumented encode count
  double initial_agreement = 0.0;       // start-argmax agreement vs labels
  double final_agreement = 0.0;
};

// Encodes each passage once per batch; every question in the batch is
// scored against that single encoding.
DistillStats train_distill(StudentModel& model,
                           const std::vector<TrainBatch>& batches,
                           const DistillOptions& opts);

struct DecodedSpan {
  bool unanswerable = false;
  Span span;
  double score = 0.0;
};

// argmax over log p_start(i) + log p_end(j), 1 <= i <= j < i + max_len, with
// the (0,0) cell as the unanswerable candidate; ties to smaller (i, j).
DecodedSpan decode_span(const SpanDistributionPair& pred, int max_len);

// question_embed + score_passage + decode_span; returns the detokenized
// answer (empty for unanswerable).
std::pair<DecodedSpan, std::string> answer_question(const StudentModel& model,
                                                    const Vocabulary& vocab,
                                                    const TokenSequence& c,
                                                    const TokenSequence& q,
                                                    int max_len = 30);

// Fraction of questions whose predicted start argmax equals the labels'
// start argmax.
double start_agreement(const StudentModel& model,
                       const std::vector<TrainBatch>& batches);

}  // namespace qap
