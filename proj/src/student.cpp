#include "qap/student.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qap {

std::vector<ParamRef> StudentModel::param_refs() {
  std::vector<ParamRef> refs = encoder.param_refs();
  refs.push_back({"start_head.w1", &start_head.w1});
  refs.push_back({"start_head.b1", &start_head.b1});
  refs.push_back({"start_head.w2", &start_head.w2});
  refs.push_back({"start_head.b2", &start_head.b2});
  refs.push_back({"end_head.w1", &end_head.w1});
  refs.push_back({"end_head.b1", &end_head.b1});
  refs.push_back({"end_head.w2", &end_head.w2});
  refs.push_back({"end_head.b2", &end_head.b2});
  return refs;
}

std::uint64_t StudentModel::checksum() const {
  std::uint64_t h = kFnvOffset;
  auto& self = const_cast<StudentModel&>(*this);
  for (const auto& ref : self.param_refs()) {
    h = fnv1a(ref.name, h);
    h = fnv1a(ref.value->data(),
              sizeof(double) * static_cast<std::size_t>(ref.value->size()), h);
  }
  return h;
}

StudentModel init_student(const EncoderConfig& config, std::uint64_t seed) {
  StudentModel model;
  model.encoder = init_params(config, seed);
  std::mt19937_64 rng(derive_seed(seed, "student-heads"));
  model.start_head = MlpHead::init(config.d, config.d, config.d, rng);
  model.end_head = MlpHead::init(config.d, config.d, config.d, rng);
  return model;
}

void save_student_checkpoint(const StudentModel& model,
                             const std::string& path) {
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  auto& self = const_cast<StudentModel&>(model);
  for (const auto& ref : self.param_refs()) tensors.emplace_back(ref.name, ref.value);
  write_checkpoint(path, ModelKind::student, model.encoder.config, tensors);
}

StudentModel load_student_checkpoint(const std::string& path,
                                     int expected_vocab_size) {
  CheckpointData data = read_checkpoint(path);
  if (data.kind != ModelKind::student)
    throw CheckpointError("checkpoint: not a student checkpoint");
  if (expected_vocab_size >= 0 && data.config.vocab_size != expected_vocab_size)
    throw ConfigError("checkpoint: vocab_size mismatch");
  StudentModel model = init_student(data.config, 0);
  for (const auto& ref : model.param_refs()) {
    const Matrix& m = data.tensor(ref.name);
    if (m.rows() != ref.value->rows() || m.cols() != ref.value->cols())
      throw CheckpointError("checkpoint: shape mismatch for " + ref.name);
    *ref.value = m;
  }
  return model;
}

QuestionEmbedding question_embed(const StudentModel& model,
                                 const TokenSequence& q) {
  const LayerRepresentations reps = encode(model.encoder, q);
  const Matrix cls = reps.final_layer().row(0);
  QuestionEmbedding qe;
  qe.f_start = model.start_head.apply(cls).row(0).transpose();
  qe.f_end = model.end_head.apply(cls).row(0).transpose();
  return qe;
}

SpanDistributionPair score_passage(const StudentModel& model,
                                   const TokenSequence& c,
                                   const QuestionEmbedding& qe) {
  const LayerRepresentations reps = encode(model.encoder, c);
  const Matrix& final = reps.final_layer();
  const Vector start_logits = final * qe.f_start;
  const Vector end_logits = final * qe.f_end;
  return SpanDistributionPair{softmax(start_logits), softmax(end_logits)};
}

namespace {

double sparse_cross_entropy(const ProbabilityVector& pred,
                            const std::vector<std::pair<int, double>>& target) {
  double loss = 0.0;
  for (const auto& [idx, w] : target) {
    if (idx < 0 || idx >= pred.size())
      throw InvalidArgument("distill_loss: label index out of range");
    if (w > 0.0)
      loss -= w * std::max(std::log(std::max(pred[idx], 0.0)),
                           std::log(kLogFloor));
  }
  return loss;
}

int sparse_argmax(const std::vector<std::pair<int, double>>& entries) {
  int best = entries.front().first;
  double best_p = entries.front().second;
  for (const auto& [idx, p] : entries)
    if (p > best_p) {  // ties keep the lower index; entries are index-sorted
      best = idx;
      best_p = p;
    }
  return best;
}

}  // namespace

double distill_loss(const SpanDistributionPair& pred,
                    const SparseSpanLabels& labels) {
  return sparse_cross_entropy(pred.start, labels.start_entries) +
         sparse_cross_entropy(pred.end, labels.end_entries);
}

double hard_label_loss(const SpanDistributionPair& pred,
                       const SparseSpanLabels& labels) {
  const int s = sparse_argmax(labels.start_entries);
  const int e = sparse_argmax(labels.end_entries);
  return sparse_cross_entropy(pred.start, {{s, 1.0}}) +
         sparse_cross_entropy(pred.end, {{e, 1.0}});
}

DistillStats train_distill(StudentModel& model,
                           const std::vector<TrainBatch>& batches,
                           const DistillOptions& opts) {
  if (batches.empty()) throw InvalidArgument("train_distill: no batches");
  for (const auto& batch : batches) {
    if (batch.questions.empty())
      throw InvalidArgument("train_distill: batch without questions");
    for (const auto& [q, labels] : batch.questions)
      labels.validate(batch.passage.length(), false);
  }

  DistillStats stats;
  stats.initial_agreement = start_agreement(model, batches);

  std::vector<ParamRef> refs = model.param_refs();
  std::vector<Matrix*> param_ptrs;
  for (auto& r : refs) param_ptrs.push_back(r.value);
  AdamOptimizer adam(param_ptrs, {.lr = opts.lr});

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(batches.size());
  std::iota(order.begin(), order.end(), 0);

  const long total_questions = [&] {
    long n = 0;
    for (const auto& b : batches) n += static_cast<long>(b.questions.size());
    return n;
  }();
  (void)total_questions;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long epoch_questions = 0;
    for (std::size_t bi : order) {
      const TrainBatch& batch = batches[bi];
      Tape tape;
      EncoderTapeParams enc = register_encoder(tape, model.encoder);
      MlpHeadTapeParams sh = register_head(tape, model.start_head);
      MlpHeadTapeParams eh = register_head(tape, model.end_head);

      // The efficiency property: one passage encoding, shared by every
      // question in the batch.
      Tape::Id passage_reps =
          encode_on_tape(tape, model.encoder.config, enc, batch.passage,
                         Mode::train, &rng);
      stats.passage_encodes++;

      Tape::Id batch_loss = -1;
      for (const auto& [q, labels] : batch.questions) {
        Tape::Id q_reps = encode_on_tape(tape, model.encoder.config, enc, q,
                                         Mode::train, &rng);
        Tape::Id cls = tape.gather_rows(q_reps, {0});
        Tape::Id f_start = head_on_tape(tape, sh, cls);
        Tape::Id f_end = head_on_tape(tape, eh, cls);
        Tape::Id start_logits = tape.matmul_nt(passage_reps, f_start);
        Tape::Id end_logits = tape.matmul_nt(passage_reps, f_end);

        std::vector<std::pair<int, double>> tstart, tend;
        if (opts.loss == DistillLossKind::soft) {
          tstart = labels.start_entries;
          tend = labels.end_entries;
        } else {
          tstart = {{sparse_argmax(labels.start_entries), 1.0}};
          tend = {{sparse_argmax(labels.end_entries), 1.0}};
        }
        Tape::Id loss =
            tape.add(tape.cross_entropy_with_logits(start_logits, tstart),
                     tape.cross_entropy_with_logits(end_logits, tend));
        batch_loss = batch_loss < 0 ? loss : tape.add(batch_loss, loss);
      }
      const double nq = static_cast<double>(batch.questions.size());
      Tape::Id objective = tape.scale(batch_loss, 1.0 / nq);
      tape.backward(objective);
      epoch_loss += tape.value(batch_loss)(0, 0);
      epoch_questions += static_cast<long>(batch.questions.size());

      std::vector<Matrix> grads;
      grads.reserve(refs.size());
      std::vector<Tape::Id> ordered = enc.ordered;
      ordered.insert(ordered.end(), sh.ordered.begin(), sh.ordered.end());
      ordered.insert(ordered.end(), eh.ordered.begin(), eh.ordered.end());
      for (Tape::Id id : ordered) grads.push_back(tape.grad(id));
      adam.step(grads);
    }
    stats.epoch_mean_loss.push_back(epoch_loss /
                                    static_cast<double>(epoch_questions));
  }
  stats.final_agreement = start_agreement(model, batches);
  return stats;
}

DecodedSpan decode_span(const SpanDistributionPair& pred, int max_len) {
  if (max_len < 1) throw InvalidArgument("decode_span: max_len must be >= 1");
  const Eigen::Index L = pred.start.size();
  auto log_at = [](const ProbabilityVector& p, Eigen::Index i) {
    return std::log(std::max(p[i], 1e-300));
  };

  DecodedSpan best;
  best.unanswerable = true;
  best.span = {0, 0};
  best.score = log_at(pred.start, 0) + log_at(pred.end, 0);
  for (Eigen::Index i = 1; i < L; ++i) {
    for (Eigen::Index j = i; j < std::min(L, i + max_len); ++j) {
      const double score = log_at(pred.start, i) + log_at(pred.end, j);
      if (score > best.score) {
        best.unanswerable = false;
        best.span = {static_cast<int>(i), static_cast<int>(j)};
        best.score = score;
      }
    }
  }
  return best;
}

std::pair<DecodedSpan, std::string> answer_question(const StudentModel& model,
                                                    const Vocabulary& vocab,
                                                    const TokenSequence& c,
                                                    const TokenSequence& q,
                                                    int max_len) {
  const QuestionEmbedding qe = question_embed(model, q);
  const SpanDistributionPair pred = score_passage(model, c, qe);
  const DecodedSpan decoded = decode_span(pred, max_len);
  if (decoded.unanswerable) return {decoded, ""};
  std::string text;
  for (int i = decoded.span.start; i <= decoded.span.end; ++i) {
    if (i > decoded.span.start) text += ' ';
    text += vocab.token(c.ids[static_cast<std::size_t>(i)]);
  }
  return {decoded, text};
}

double start_agreement(const StudentModel& model,
                       const std::vector<TrainBatch>& batches) {
  long agree = 0;
  long total = 0;
  for (const auto& batch : batches) {
    for (const auto& [q, labels] : batch.questions) {
      const QuestionEmbedding qe = question_embed(model, q);
      const SpanDistributionPair pred = score_passage(model, batch.passage, qe);
      Eigen::Index pred_argmax;
      pred.start.probs().maxCoeff(&pred_argmax);
      if (static_cast<int>(pred_argmax) == sparse_argmax(labels.start_entries))
        ++agree;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace qap
