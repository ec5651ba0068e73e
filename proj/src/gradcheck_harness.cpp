#include "qap/gradcheck_harness.hpp"

#include <numeric>
#include <ostream>

#include "qap/bertscore.hpp"
#include "qap/prompts.hpp"
#include "qap/student.hpp"
#include "qap/teacher.hpp"

namespace qap {

namespace {

constexpr double kEpsilon = 1e-3;

EncoderConfig tiny_config() {
  EncoderConfig config;
  config.d = 8;
  config.n_layers = 2;
  config.n_heads = 2;
  config.ffn_width = 16;
  config.max_positions = 512;
  config.dropout_rate = 0.0;  // closures must be deterministic
  config.vocab_size = 24;
  return config;
}

TokenSequence make_sequence(std::vector<int> body) {
  TokenSequence seq;
  seq.ids.push_back(kBos);
  for (int id : body) seq.ids.push_back(id);
  return seq;
}

std::vector<Matrix> collect_grads(const Tape& tape,
                                  const std::vector<Tape::Id>& ordered) {
  std::vector<Matrix> grads;
  grads.reserve(ordered.size());
  for (Tape::Id id : ordered) grads.push_back(tape.grad(id));
  return grads;
}

GradCheckCase check_teacher_loss(std::uint64_t seed) {
  TeacherModel model = init_teacher(tiny_config(), seed);
  const TokenSequence context = make_sequence({5, 6, 7, 8});
  const TokenSequence question = make_sequence({9, 10, 11});
  const Span gold{2, 3};

  auto loss_fn = [&](std::vector<Matrix>* grads) {
    Tape tape;
    EncoderTapeParams enc = register_encoder(tape, model.encoder);
    MlpHeadTapeParams sh = register_head(tape, model.start_head);
    MlpHeadTapeParams eh = register_head(tape, model.end_head);
    const ConcatInput cat =
        concat_input(context, question, model.encoder.config.max_positions);
    Tape::Id final = encode_on_tape(tape, model.encoder.config, enc, cat.tokens,
                                    Mode::eval, nullptr);
    std::vector<int> ctx(static_cast<std::size_t>(cat.context_len));
    std::iota(ctx.begin(), ctx.end(), 0);
    Tape::Id start = tape.gather_rows(head_on_tape(tape, sh, final), ctx);
    Tape::Id end = tape.gather_rows(head_on_tape(tape, eh, final), ctx);
    Tape::Id loss =
        tape.add(tape.cross_entropy_with_logits(start, {{gold.start, 1.0}}),
                 tape.cross_entropy_with_logits(end, {{gold.end, 1.0}}));
    if (grads) {
      tape.backward(loss);
      std::vector<Tape::Id> ordered = enc.ordered;
      ordered.insert(ordered.end(), sh.ordered.begin(), sh.ordered.end());
      ordered.insert(ordered.end(), eh.ordered.begin(), eh.ordered.end());
      *grads = collect_grads(tape, ordered);
    }
    return tape.value(loss)(0, 0);
  };

  GradCheckCase c;
  c.name = "teacher_loss(seed=" + std::to_string(seed) + ")";
  c.report = grad_check(model.param_refs(), loss_fn, kEpsilon);
  c.passed = c.report.max_relative_error < c.bound;
  return c;
}

GradCheckCase check_distill_loss(std::uint64_t seed, bool hard) {
  StudentModel model = init_student(tiny_config(), seed);
  const TokenSequence passage = make_sequence({5, 6, 7, 8, 9});
  const TokenSequence q1 = make_sequence({10, 11});
  const TokenSequence q2 = make_sequence({12, 13, 14});
  std::vector<std::pair<int, double>> t1s = {{1, 0.25}, {3, 0.75}};
  std::vector<std::pair<int, double>> t1e = {{3, 0.6}, {4, 0.4}};
  std::vector<std::pair<int, double>> t2s = {{0, 1.0}};
  std::vector<std::pair<int, double>> t2e = {{0, 1.0}};
  if (hard) {
    t1s = {{3, 1.0}};
    t1e = {{3, 1.0}};
  }

  auto loss_fn = [&](std::vector<Matrix>* grads) {
    Tape tape;
    EncoderTapeParams enc = register_encoder(tape, model.encoder);
    MlpHeadTapeParams sh = register_head(tape, model.start_head);
    MlpHeadTapeParams eh = register_head(tape, model.end_head);
    Tape::Id reps = encode_on_tape(tape, model.encoder.config, enc, passage,
                                   Mode::eval, nullptr);
    auto question_loss = [&](const TokenSequence& q,
                             const std::vector<std::pair<int, double>>& ts,
                             const std::vector<std::pair<int, double>>& te) {
      Tape::Id q_reps =
          encode_on_tape(tape, model.encoder.config, enc, q, Mode::eval,
                         nullptr);
      Tape::Id cls = tape.gather_rows(q_reps, {0});
      Tape::Id f_start = head_on_tape(tape, sh, cls);
      Tape::Id f_end = head_on_tape(tape, eh, cls);
      return tape.add(
          tape.cross_entropy_with_logits(tape.matmul_nt(reps, f_start), ts),
          tape.cross_entropy_with_logits(tape.matmul_nt(reps, f_end), te));
    };
    Tape::Id loss =
        tape.add(question_loss(q1, t1s, t1e), question_loss(q2, t2s, t2e));
    if (grads) {
      tape.backward(loss);
      std::vector<Tape::Id> ordered = enc.ordered;
      ordered.insert(ordered.end(), sh.ordered.begin(), sh.ordered.end());
      ordered.insert(ordered.end(), eh.ordered.begin(), eh.ordered.end());
      *grads = collect_grads(tape, ordered);
    }
    return tape.value(loss)(0, 0);
  };

  GradCheckCase c;
  c.name = std::string(hard ? "distill_hard_loss" : "distill_soft_loss") +
           "(seed=" + std::to_string(seed) + ")";
  c.report = grad_check(model.param_refs(), loss_fn, kEpsilon);
  c.passed = c.report.max_relative_error < c.bound;
  return c;
}

GradCheckCase check_ner_loss(std::uint64_t seed) {
  StudentModel model = init_student(tiny_config(), seed);
  const TokenSequence sentence = make_sequence({5, 6, 7, 8});
  const std::vector<int> tags = {1, 2, 0, 3};
  Matrix output = random_output_matrix(
      TagSet::from_entity_types({"person", "location"}), tiny_config().d,
      derive_seed(seed, "ner-m"));

  std::vector<ParamRef> refs = model.encoder.param_refs();
  refs.push_back({"output_matrix", &output});

  auto loss_fn = [&](std::vector<Matrix>* grads) {
    Tape tape;
    EncoderTapeParams enc = register_encoder(tape, model.encoder);
    Tape::Id m_id = tape.input(output);
    Tape::Id reps = encode_on_tape(tape, model.encoder.config, enc, sentence,
                                   Mode::eval, nullptr);
    Tape::Id logits = tape.matmul_nt(reps, m_id);
    Tape::Id total = -1;
    for (std::size_t i = 0; i < tags.size(); ++i) {
      Tape::Id row = tape.transpose(
          tape.gather_rows(logits, {static_cast<int>(i) + 1}));
      Tape::Id l = tape.cross_entropy_with_logits(row, {{tags[i], 1.0}});
      total = total < 0 ? l : tape.add(total, l);
    }
    if (grads) {
      tape.backward(total);
      std::vector<Tape::Id> ordered = enc.ordered;
      ordered.push_back(m_id);
      *grads = collect_grads(tape, ordered);
    }
    return tape.value(total)(0, 0);
  };

  GradCheckCase c;
  c.name = "ner_loss(seed=" + std::to_string(seed) + ")";
  c.report = grad_check(refs, loss_fn, kEpsilon);
  c.passed = c.report.max_relative_error < c.bound;
  return c;
}

GradCheckCase check_finetune_loss(std::uint64_t seed) {
  StudentModel model = init_student(tiny_config(), seed);
  const TokenSequence s1 = make_sequence({5, 6, 7});
  const TokenSequence s2 = make_sequence({8, 9, 10, 11});
  const int label = 1;
  const int n_layers_total = model.encoder.config.n_layers + 1;
  const int n_features = std::min(8, n_layers_total);
  const int first_layer = n_layers_total - n_features;

  std::mt19937_64 rng(derive_seed(seed, "finetune-head"));
  std::normal_distribution<double> dist(0.0, 0.5);
  Matrix head_w(n_features, 1);
  for (int i = 0; i < n_features; ++i) head_w(i, 0) = dist(rng);
  Matrix head_b = Matrix::Zero(1, 1);

  std::vector<ParamRef> refs = model.encoder.param_refs();
  refs.push_back({"head_w", &head_w});
  refs.push_back({"head_b", &head_b});

  auto loss_fn = [&](std::vector<Matrix>* grads) {
    Tape tape;
    EncoderTapeParams enc = register_encoder(tape, model.encoder);
    Tape::Id w_id = tape.input(head_w);
    Tape::Id b_id = tape.input(head_b);
    std::vector<Tape::Id> l1, l2;
    encode_on_tape(tape, model.encoder.config, enc, s1, Mode::eval, nullptr,
                   &l1);
    encode_on_tape(tape, model.encoder.config, enc, s2, Mode::eval, nullptr,
                   &l2);
    Tape::Id score = -1;
    for (int f = 0; f < n_features; ++f) {
      const int layer = first_layer + f;
      auto content = [&](Tape::Id reps, int len) {
        std::vector<int> idx;
        for (int i = 1; i < len; ++i) idx.push_back(i);
        return tape.normalize_rows(tape.gather_rows(reps, idx));
      };
      Tape::Id a = content(l1[static_cast<std::size_t>(layer)], s1.length());
      Tape::Id b = content(l2[static_cast<std::size_t>(layer)], s2.length());
      Tape::Id b12 = tape.mean_all(tape.rowwise_max(tape.matmul_nt(a, b)));
      Tape::Id b21 = tape.mean_all(tape.rowwise_max(tape.matmul_nt(b, a)));
      Tape::Id fb = tape.scale(
          tape.cdiv(tape.cmul(b12, b21), tape.add(b12, b21)), 2.0);
      Tape::Id term = tape.cmul(fb, tape.gather_rows(w_id, {f}));
      score = score < 0 ? term : tape.add(score, term);
    }
    score = tape.add(score, b_id);
    Tape::Id loss = tape.logistic_loss(score, label);
    if (grads) {
      tape.backward(loss);
      std::vector<Tape::Id> ordered = enc.ordered;
      ordered.push_back(w_id);
      ordered.push_back(b_id);
      *grads = collect_grads(tape, ordered);
    }
    return tape.value(loss)(0, 0);
  };

  GradCheckCase c;
  c.name = "finetune_loss(seed=" + std::to_string(seed) + ")";
  c.report = grad_check(refs, loss_fn, kEpsilon);
  c.passed = c.report.max_relative_error < c.bound;
  return c;
}

}  // namespace

std::vector<GradCheckCase> run_all_grad_checks(std::uint64_t base_seed) {
  std::vector<GradCheckCase> cases;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const std::uint64_t seed = base_seed + s;
    cases.push_back(check_teacher_loss(seed));
    cases.push_back(check_distill_loss(seed, false));
    cases.push_back(check_distill_loss(seed, true));
    cases.push_back(check_ner_loss(seed));
    cases.push_back(check_finetune_loss(seed));
  }
  return cases;
}

bool run_gradient_check_harness(std::ostream& os, std::uint64_t base_seed) {
  bool all_passed = true;
  for (const auto& c : run_all_grad_checks(base_seed)) {
    os << (c.passed ? "[PASS] " : "[FAIL] ") << c.name
       << " max_rel_err=" << c.report.max_relative_error
       << " worst=" << c.report.worst_parameter << "\n";
    all_passed = all_passed && c.passed;
  }
  return all_passed;
}

}  // namespace qap
