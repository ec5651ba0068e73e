#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qap/encoder.hpp"

namespace qap {

// 2-layer MLP with GELU between the layers; maps in -> hidden -> out per row.
struct MlpHead {
  Matrix w1, b1, w2, b2;

  static MlpHead init(int in, int hidden, int out, std::mt19937_64& rng);
  Matrix apply(const Matrix& x) const;
};

struct MlpHeadTapeParams {
  Tape::Id w1, b1, w2, b2;
  std::vector<Tape::Id> ordered;
};

MlpHeadTapeParams register_head(Tape& tape, const MlpHead& head);
Tape::Id head_on_tape(Tape& tape, const MlpHeadTapeParams& p, Tape::Id x);

// Start/end probability distributions over positions of one sequence.
struct SpanDistributionPair {
  ProbabilityVector start;
  ProbabilityVector end;
};

// Cross-encoder over [BOS] c [SEP] q with two independent per-token heads.
struct TeacherModel {
  EncoderParams encoder;
  MlpHead start_head, end_head;  // d -> d -> 1

  std::vector<ParamRef> param_refs();
  std::uint64_t checksum() const;
};

TeacherModel init_teacher(const EncoderConfig& config, std::uint64_t seed);

void save_teacher_checkpoint(const TeacherModel& model, const std::string& path);
TeacherModel load_teacher_checkpoint(const std::string& path,
                                     int expected_vocab_size = -1);

// Concatenation [BOS] + c + [SEP] + q. Context tokens keep their positions,
// so span indices into c are valid indices into the concatenation.
struct ConcatInput {
  TokenSequence tokens;
  int context_len = 0;  // positions [0, context_len) belong to the context
  int sep_index = 0;
};

ConcatInput concat_input(const TokenSequence& c, const TokenSequence& q,
                         int max_positions);

// Start/end distributions over the concatenated input with all question and
// [SEP] positions carrying exactly zero probability. Position 0 ([BOS]) is
// the unanswerable slot.
SpanDistributionPair teacher_predict(const TeacherModel& model,
                                     const TokenSequence& c,
                                     const TokenSequence& q,
                                     double temperature = 1.0);

// One supervised QA example; unanswerable gold spans sit at [BOS] (0,0).
struct LabeledQA {
  TokenSequence context;
  TokenSequence question;
  Span gold;
};

struct TeacherTrainOptions {
  int epochs = 10;
  double lr = 1e-3;
  int batch_size = 8;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct EpochLog {
  double train_loss = 0.0;
  std::optional<double> holdout_loss;
};

std::vector<EpochLog> train_teacher(TeacherModel& model,
                                    const std::vector<LabeledQA>& data,
                                    const TeacherTrainOptions& opts);

// Top-k sparsification of a distribution: keep the k largest entries (ties
// to the lower index), drop zeros, optionally renormalize to sum 1.
std::vector<std::pair<int, double>> sparsify_topk(const ProbabilityVector& dist,
                                                  int k = 8,
                                                  bool renormalize = true);

// Teacher targets stored as at most k (index, prob) pairs per head.
struct SparseSpanLabels {
  std::string qid;
  std::vector<std::pair<int, double>> start_entries;
  std::vector<std::pair<int, double>> end_entries;

  bool unanswerable_flagged() const;
  void validate(int context_len, bool renormalized) const;
};

SparseSpanLabels make_sparse_labels(const std::string& qid,
                                    const SpanDistributionPair& pred,
                                    int context_len, int k, bool renormalize);

void save_labels_jsonl(const std::string& path,
                       const std::vector<SparseSpanLabels>& labels);
std::vector<SparseSpanLabels> load_labels_jsonl(const std::string& path);

}  // namespace qap
