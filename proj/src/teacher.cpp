#include "qap/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace qap {

using nlohmann::json;

namespace {

constexpr double kInitStd = 0.02;

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

}  // namespace

MlpHead MlpHead::init(int in, int hidden, int out, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, kInitStd);
  MlpHead h;
  h.w1 = Matrix(in, hidden);
  for (Eigen::Index c = 0; c < h.w1.cols(); ++c)
    for (Eigen::Index r = 0; r < h.w1.rows(); ++r) h.w1(r, c) = dist(rng);
  h.b1 = Matrix::Zero(1, hidden);
  h.w2 = Matrix(hidden, out);
  for (Eigen::Index c = 0; c < h.w2.cols(); ++c)
    for (Eigen::Index r = 0; r < h.w2.rows(); ++r) h.w2(r, c) = dist(rng);
  h.b2 = Matrix::Zero(1, out);
  return h;
}

Matrix MlpHead::apply(const Matrix& x) const {
  Matrix hidden = x * w1;
  hidden.rowwise() += b1.row(0);
  hidden = hidden.unaryExpr([](double v) { return gelu_scalar(v); });
  Matrix out = hidden * w2;
  out.rowwise() += b2.row(0);
  return out;
}

MlpHeadTapeParams register_head(Tape& tape, const MlpHead& head) {
  MlpHeadTapeParams p;
  p.w1 = tape.input(head.w1);
  p.b1 = tape.input(head.b1);
  p.w2 = tape.input(head.w2);
  p.b2 = tape.input(head.b2);
  p.ordered = {p.w1, p.b1, p.w2, p.b2};
  return p;
}

Tape::Id head_on_tape(Tape& tape, const MlpHeadTapeParams& p, Tape::Id x) {
  return tape.add_row(
      tape.matmul(tape.gelu(tape.add_row(tape.matmul(x, p.w1), p.b1)), p.w2),
      p.b2);
}

std::vector<ParamRef> TeacherModel::param_refs() {
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

std::uint64_t TeacherModel::checksum() const {
  std::uint64_t h = kFnvOffset;
  auto& self = const_cast<TeacherModel&>(*this);
  for (const auto& ref : self.param_refs()) {
    h = fnv1a(ref.name, h);
    h = fnv1a(ref.value->data(),
              sizeof(double) * static_cast<std::size_t>(ref.value->size()), h);
  }
  return h;
}

TeacherModel init_teacher(const EncoderConfig& config, std::uint64_t seed) {
  TeacherModel model;
  model.encoder = init_params(config, seed);
  std::mt19937_64 rng(derive_seed(seed, "teacher-heads"));
  model.start_head = MlpHead::init(config.d, config.d, 1, rng);
  model.end_head = MlpHead::init(config.d, config.d, 1, rng);
  return model;
}

namespace {

std::vector<std::pair<std::string, const Matrix*>> teacher_tensor_list(
    const TeacherModel& model) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  auto& self = const_cast<TeacherModel&>(model);
  for (const auto& ref : self.param_refs()) out.emplace_back(ref.name, ref.value);
  return out;
}

}  // namespace

void save_teacher_checkpoint(const TeacherModel& model,
                             const std::string& path) {
  write_checkpoint(path, ModelKind::teacher, model.encoder.config,
                   teacher_tensor_list(model));
}

TeacherModel load_teacher_checkpoint(const std::string& path,
                                     int expected_vocab_size) {
  CheckpointData data = read_checkpoint(path);
  if (data.kind != ModelKind::teacher)
    throw CheckpointError("checkpoint: not a teacher checkpoint");
  if (expected_vocab_size >= 0 && data.config.vocab_size != expected_vocab_size)
    throw ConfigError("checkpoint: vocab_size mismatch");
  TeacherModel model = init_teacher(data.config, 0);
  for (const auto& ref : model.param_refs()) {
    const Matrix& m = data.tensor(ref.name);
    if (m.rows() != ref.value->rows() || m.cols() != ref.value->cols())
      throw CheckpointError("checkpoint: shape mismatch for " + ref.name);
    *ref.value = m;
  }
  return model;
}

ConcatInput concat_input(const TokenSequence& c, const TokenSequence& q,
                         int max_positions) {
  c.validate();
  q.validate();
  ConcatInput out;
  out.tokens.ids = c.ids;
  out.context_len = c.length();
  out.sep_index = c.length();
  out.tokens.ids.push_back(kSep);
  out.tokens.ids.insert(out.tokens.ids.end(), q.ids.begin() + 1, q.ids.end());
  if (out.tokens.length() > max_positions)
    throw InvalidArgument("concat_input: combined length " +
                          std::to_string(out.tokens.length()) + " exceeds " +
                          std::to_string(max_positions));
  return out;
}

SpanDistributionPair teacher_predict(const TeacherModel& model,
                                     const TokenSequence& c,
                                     const TokenSequence& q,
                                     double temperature) {
  if (temperature <= 0.0)
    throw InvalidArgument("teacher_predict: temperature must be positive");
  const ConcatInput cat =
      concat_input(c, q, model.encoder.config.max_positions);
  const LayerRepresentations reps = encode(model.encoder, cat.tokens);
  const Matrix& final = reps.final_layer();

  const Matrix start_logits = model.start_head.apply(final) / temperature;
  const Matrix end_logits = model.end_head.apply(final) / temperature;

  auto masked = [&](const Matrix& logits) {
    ProbabilityVector context_probs =
        softmax(logits.col(0).head(cat.context_len));
    Vector full = Vector::Zero(cat.tokens.length());
    full.head(cat.context_len) = context_probs.probs();
    return ProbabilityVector(std::move(full));
  };
  return SpanDistributionPair{masked(start_logits), masked(end_logits)};
}

std::vector<EpochLog> train_teacher(TeacherModel& model,
                                    const std::vector<LabeledQA>& data,
                                    const TeacherTrainOptions& opts) {
  if (data.empty()) throw InvalidArgument("train_teacher: empty dataset");
  for (const auto& ex : data) {
    if (!(ex.gold.start == 0 && ex.gold.end == 0))
      ex.gold.validate(ex.context.length());
  }

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t holdout =
      std::min(data.size() > 1 ? data.size() - 1 : 0,
               static_cast<std::size_t>(
                   std::floor(opts.holdout_fraction *
                              static_cast<double>(data.size()))));
  std::vector<std::size_t> eval_set(order.end() - static_cast<long>(holdout),
                                    order.end());
  std::vector<std::size_t> train_set(order.begin(),
                                     order.end() - static_cast<long>(holdout));

  std::vector<ParamRef> refs = model.param_refs();
  std::vector<Matrix*> param_ptrs;
  for (auto& r : refs) param_ptrs.push_back(r.value);
  AdamOptimizer adam(param_ptrs, {.lr = opts.lr});

  auto example_loss_ids = [&](Tape& tape, const EncoderTapeParams& enc,
                              const MlpHeadTapeParams& sh,
                              const MlpHeadTapeParams& eh,
                              const LabeledQA& ex) {
    const ConcatInput cat =
        concat_input(ex.context, ex.question,
                     model.encoder.config.max_positions);
    Tape::Id final =
        encode_on_tape(tape, model.encoder.config, enc, cat.tokens, Mode::train,
                       &rng);
    Tape::Id start_logits = head_on_tape(tape, sh, final);
    Tape::Id end_logits = head_on_tape(tape, eh, final);
    // Positions past the context never receive probability; restricting the
    // softmax to the context prefix implements the mask.
    Tape::Id start_ctx = tape.gather_rows(
        start_logits, [&] {
          std::vector<int> idx(static_cast<std::size_t>(cat.context_len));
          std::iota(idx.begin(), idx.end(), 0);
          return idx;
        }());
    Tape::Id end_ctx = tape.gather_rows(
        end_logits, [&] {
          std::vector<int> idx(static_cast<std::size_t>(cat.context_len));
          std::iota(idx.begin(), idx.end(), 0);
          return idx;
        }());
    Tape::Id loss = tape.add(
        tape.cross_entropy_with_logits(start_ctx, {{ex.gold.start, 1.0}}),
        tape.cross_entropy_with_logits(end_ctx, {{ex.gold.end, 1.0}}));
    return loss;
  };

  auto holdout_loss = [&]() -> std::optional<double> {
    if (eval_set.empty()) return std::nullopt;
    double total = 0.0;
    for (std::size_t i : eval_set) {
      const LabeledQA& ex = data[i];
      const SpanDistributionPair pred =
          teacher_predict(model, ex.context, ex.question);
      const Vector logs = pred.start.probs().array().max(kLogFloor).log();
      const Vector loge = pred.end.probs().array().max(kLogFloor).log();
      total += -logs[ex.gold.start] - loge[ex.gold.end];
    }
    return total / static_cast<double>(eval_set.size());
  };

  std::vector<EpochLog> logs;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(train_set.begin(), train_set.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < train_set.size();
         b += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end =
          std::min(train_set.size(), b + static_cast<std::size_t>(opts.batch_size));
      Tape tape;
      EncoderTapeParams enc = register_encoder(tape, model.encoder);
      MlpHeadTapeParams sh = register_head(tape, model.start_head);
      MlpHeadTapeParams eh = register_head(tape, model.end_head);
      Tape::Id batch_loss = -1;
      for (std::size_t i = b; i < end; ++i) {
        Tape::Id l = example_loss_ids(tape, enc, sh, eh, data[train_set[i]]);
        batch_loss = batch_loss < 0 ? l : tape.add(batch_loss, l);
      }
      const double inv = 1.0 / static_cast<double>(end - b);
      batch_loss = tape.scale(batch_loss, inv);
      tape.backward(batch_loss);
      epoch_loss += tape.value(batch_loss)(0, 0) * static_cast<double>(end - b);

      std::vector<Matrix> grads;
      grads.reserve(refs.size());
      std::vector<Tape::Id> ordered = enc.ordered;
      ordered.insert(ordered.end(), sh.ordered.begin(), sh.ordered.end());
      ordered.insert(ordered.end(), eh.ordered.begin(), eh.ordered.end());
      for (Tape::Id id : ordered) grads.push_back(tape.grad(id));
      adam.step(grads);
    }
    EpochLog log;
    log.train_loss = epoch_loss / static_cast<double>(train_set.size());
    log.holdout_loss = holdout_loss();
    logs.push_back(log);
  }
  return logs;
}

std::vector<std::pair<int, double>> sparsify_topk(const ProbabilityVector& dist,
                                                  int k, bool renormalize) {
  if (k < 1) throw InvalidArgument("sparsify_topk: k must be >= 1");
  std::vector<std::pair<int, double>> entries;
  for (Eigen::Index i = 0; i < dist.size(); ++i)
    if (dist[i] > 0.0) entries.emplace_back(static_cast<int>(i), dist[i]);
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (entries.size() > static_cast<std::size_t>(k))
    entries.resize(static_cast<std::size_t>(k));
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  if (renormalize) {
    double total = 0.0;
    for (const auto& [i, p] : entries) total += p;
    for (auto& [i, p] : entries) p /= total;
  }
  return entries;
}

bool SparseSpanLabels::unanswerable_flagged() const {
  auto has_zero = [](const std::vector<std::pair<int, double>>& v) {
    return !v.empty() && v.front().first == 0;
  };
  return has_zero(start_entries) || has_zero(end_entries);
}

void SparseSpanLabels::validate(int context_len, bool renormalized) const {
  auto check = [&](const std::vector<std::pair<int, double>>& v,
                   const char* which) {
    if (v.empty())
      throw ValidationError(std::string("labels ") + qid + ": empty " + which);
    int prev = -1;
    double sum = 0.0;
    for (const auto& [idx, p] : v) {
      if (idx <= prev)
        throw ValidationError(std::string("labels ") + qid + ": " + which +
                              " indices not strictly increasing");
      if (idx < 0 || idx >= context_len)
        throw ValidationError(std::string("labels ") + qid + ": " + which +
                              " index out of range");
      if (!(p > 0.0))
        throw ValidationError(std::string("labels ") + qid + ": " + which +
                              " probability not positive");
      prev = idx;
      sum += p;
    }
    if (renormalized && std::abs(sum - 1.0) > 1e-9)
      throw ValidationError(std::string("labels ") + qid + ": " + which +
                            " does not sum to 1");
  };
  check(start_entries, "start");
  check(end_entries, "end");
}

SparseSpanLabels make_sparse_labels(const std::string& qid,
                                    const SpanDistributionPair& pred,
                                    int context_len, int k, bool renormalize) {
  SparseSpanLabels out;
  out.qid = qid;
  out.start_entries = sparsify_topk(pred.start, k, renormalize);
  out.end_entries = sparsify_topk(pred.end, k, renormalize);
  out.validate(context_len, renormalize);
  return out;
}

void save_labels_jsonl(const std::string& path,
                       const std::vector<SparseSpanLabels>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_labels_jsonl: cannot open " + path);
  for (const auto& l : labels) {
    json j;
    j["qid"] = l.qid;
    json s = json::array();
    for (const auto& [i, p] : l.start_entries) s.push_back({i, p});
    json e = json::array();
    for (const auto& [i, p] : l.end_entries) e.push_back({i, p});
    j["start"] = std::move(s);
    j["end"] = std::move(e);
    out << j.dump() << "\n";
  }
}

std::vector<SparseSpanLabels> load_labels_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_labels_jsonl: cannot open " + path);
  std::vector<SparseSpanLabels> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("labels: ") + e.what(), line_no);
    }
    SparseSpanLabels l;
    l.qid = j.at("qid").get<std::string>();
    for (const auto& pair : j.at("start"))
      l.start_entries.emplace_back(pair.at(0).get<int>(),
                                   pair.at(1).get<double>());
    for (const auto& pair : j.at("end"))
      l.end_entries.emplace_back(pair.at(0).get<int>(),
                                 pair.at(1).get<double>());
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace qap
