#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qap/student.hpp"

namespace qap {

// Mean over non-[BOS] tokens of x1 of the best cosine similarity against
// any non-[BOS] token of x2. Inputs are L x d representation matrices.
double greedy_match(const Matrix& x1_reps, const Matrix& x2_reps);

// Harmonic mean of the two greedy-match directions at one layer.
double f_bert(const LayerRepresentations& x1, const LayerRepresentations& x2,
              int layer);

struct SentencePair {
  TokenSequence s1;
  TokenSequence s2;
  std::optional<int> label;        // 0/1 for classification pairs
  std::optional<double> judgment;  // graded score for layer selection
};

std::vector<SentencePair> load_pairs_jsonl(const std::string& path,
                                           const Vocabulary& vocab);
void save_pairs_jsonl(const std::string& path,
                      const std::vector<SentencePair>& pairs,
                      const Vocabulary& vocab);

struct LayerSelection {
  int layer = 0;
  std::vector<double> per_layer_pearson;
};

// Layer whose f_bert scores correlate best (Pearson) with the judgments;
// ties resolve to the deeper layer.
LayerSelection select_layer(const EncoderParams& encoder,
                            const std::vector<SentencePair>& judged);

// f_bert at the final min(8, n_layers+1) layers, shallow to deep.
Vector extract_features(const EncoderParams& encoder, const SentencePair& pair);

struct LogRegModel {
  Vector weights;
  double bias = 0.0;
  double l2_lambda = 0.0;

  double score(const Vector& features) const;         // linear logit
  double predict_prob(const Vector& features) const;  // sigmoid(score)
};

// L2-regularized logistic regression (bias unregularized), driven to
// gradient norm < 1e-8 by Newton steps. Loss is sum_i log(1+exp(-t_i u_i))
// + 0.5 * lambda * |w|^2.
LogRegModel train_logreg(const Matrix& features, const std::vector<int>& labels,
                         double l2_lambda);

double logreg_loss(const LogRegModel& model, const Matrix& features,
                   const std::vector<int>& labels);

struct FineTuneOptions {
  int epochs = 20;
  double lr = 1e-4;
  double output_lr_multiplier = 1000.0;
  std::uint64_t seed = 0;
};

struct FineTuneResult {
  LogRegModel head;
  std::vector<double> epoch_loss;
  double output_lr_multiplier = 0.0;
};

// Backpropagates the logistic loss over per-layer f_bert features through
// the encoder. Dropout is forced off; the output layer trains at
// lr * output_lr_multiplier.
FineTuneResult fine_tune_paraphrase(StudentModel& model,
                                    const std::vector<SentencePair>& pairs,
                                    const FineTuneOptions& opts);

// Rank-based Mann-Whitney AUROC with ties counted 1/2.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace qap
