#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "qap/teacher.hpp"
#include "support.hpp"

using namespace qap;
using qap::test::seq;
using qap::test::TempDir;
using qap::test::tiny_config;

TEST_CASE("concat_input layout") {
  SUBCASE("3-token context and 2-token question") {
    const ConcatInput cat = concat_input(seq({5, 6, 7}), seq({8, 9}), 512);
    CHECK(cat.tokens.length() == 7);
    CHECK(cat.sep_index == 4);
    CHECK(cat.tokens.ids[4] == kSep);
    CHECK(cat.context_len == 4);
    CHECK(cat.tokens.ids[0] == kBos);
  }
  SUBCASE("empty question") {
    const ConcatInput cat = concat_input(seq({5, 6, 7}), seq({}), 512);
    CHECK(cat.tokens.ids == std::vector<int>{kBos, 5, 6, 7, kSep});
  }
  SUBCASE("456 + 50 fits the position budget") {
    std::vector<int> c(456, 5), q(50, 6);
    const ConcatInput cat = concat_input(seq(c), seq(q), 512);
    CHECK(cat.tokens.length() == 1 + 456 + 1 + 50);
  }
  SUBCASE("over-length is rejected") {
    std::vector<int> c(456, 5), q(60, 6);
    CHECK_THROWS_AS(concat_input(seq(c), seq(q), 512), InvalidArgument);
  }
}

TEST_CASE("teacher_predict masks question positions and normalizes") {
  const TeacherModel model = init_teacher(tiny_config(), 1);
  const TokenSequence c = seq({5, 6, 7, 8});
  const TokenSequence q = seq({9, 10});
  const SpanDistributionPair pred = teacher_predict(model, c, q);
  const int context_len = c.length();
  CHECK(pred.start.size() == 1 + 4 + 1 + 2);
  CHECK(std::abs(pred.start.probs().sum() - 1.0) <= 1e-9);
  CHECK(std::abs(pred.end.probs().sum() - 1.0) <= 1e-9);
  for (Eigen::Index i = context_len; i < pred.start.size(); ++i) {
    CHECK(pred.start[i] == 0.0);
    CHECK(pred.end[i] == 0.0);
  }
}

TEST_CASE("teacher_predict is permutation-covariant with zeroed positions") {
  TeacherModel model = init_teacher(tiny_config(), 2);
  model.encoder.position_embedding.setZero();
  const TokenSequence c = seq({5, 6, 7, 8});
  TokenSequence swapped = c;
  std::swap(swapped.ids[1], swapped.ids[3]);
  const TokenSequence q = seq({9, 10});
  const SpanDistributionPair a = teacher_predict(model, c, q);
  const SpanDistributionPair b = teacher_predict(model, swapped, q);
  CHECK(a.start[1] == doctest::Approx(b.start[3]).epsilon(1e-9));
  CHECK(a.start[3] == doctest::Approx(b.start[1]).epsilon(1e-9));
  CHECK(a.start[2] == doctest::Approx(b.start[2]).epsilon(1e-9));
  CHECK(a.end[1] == doctest::Approx(b.end[3]).epsilon(1e-9));
}

TEST_CASE("sparsify_topk") {
  SUBCASE("closed form, k=2") {
    Vector p(4);
    p << 0.4, 0.3, 0.2, 0.1;
    const auto entries = sparsify_topk(ProbabilityVector(p), 2);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].first == 0);
    CHECK(entries[0].second == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    CHECK(entries[1].first == 1);
    CHECK(entries[1].second == doctest::Approx(3.0 / 7.0).epsilon(1e-12));
  }
  SUBCASE("k >= length is the identity") {
    Vector p(3);
    p << 0.2, 0.5, 0.3;
    const auto entries = sparsify_topk(ProbabilityVector(p), 8);
    REQUIRE(entries.size() == 3);
    for (const auto& [i, w] : entries)
      CHECK(w == doctest::Approx(p[i]).epsilon(1e-12));
  }
  SUBCASE("uniform ties keep the lowest indices") {
    Vector p = Vector::Constant(10, 0.1);
    const auto entries = sparsify_topk(ProbabilityVector(p), 8);
    REQUIRE(entries.size() == 8);
    for (int i = 0; i < 8; ++i) {
      CHECK(entries[static_cast<std::size_t>(i)].first == i);
      CHECK(entries[static_cast<std::size_t>(i)].second ==
            doctest::Approx(1.0 / 8.0).epsilon(1e-12));
    }
  }
  SUBCASE("raw-mass variant keeps the original probabilities") {
    Vector p(4);
    p << 0.4, 0.3, 0.2, 0.1;
    const auto entries = sparsify_topk(ProbabilityVector(p), 2, false);
    CHECK(entries[0].second == doctest::Approx(0.4));
    CHECK(entries[1].second == doctest::Approx(0.3));
  }
}

TEST_CASE("sparsify_topk properties: argmax preserved, idempotent, normalized") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(1e-6, 1.0);
  std::uniform_int_distribution<int> len(1, 30);
  for (int trial = 0; trial < 1000; ++trial) {
    const int L = len(rng);
    Vector p(L);
    for (int i = 0; i < L; ++i) p[i] = unif(rng);
    p /= p.sum();
    const ProbabilityVector dense(p);
    const auto sparse = sparsify_topk(dense, 8);

    Eigen::Index dense_argmax;
    p.maxCoeff(&dense_argmax);
    int sparse_argmax = sparse.front().first;
    double best = sparse.front().second;
    for (const auto& [i, w] : sparse)
      if (w > best) {
        best = w;
        sparse_argmax = i;
      }
    CHECK(sparse_argmax == static_cast<int>(dense_argmax));

    double sum = 0.0;
    int prev = -1;
    for (const auto& [i, w] : sparse) {
      CHECK(i > prev);
      CHECK(w > 0.0);
      prev = i;
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    // idempotence: re-sparsifying the sparse distribution changes nothing
    Vector rebuilt = Vector::Zero(L);
    for (const auto& [i, w] : sparse) rebuilt[i] = w;
    const auto twice = sparsify_topk(ProbabilityVector(rebuilt), 8);
    REQUIRE(twice.size() == sparse.size());
    for (std::size_t i = 0; i < sparse.size(); ++i) {
      CHECK(twice[i].first == sparse[i].first);
      CHECK(twice[i].second == doctest::Approx(sparse[i].second).epsilon(1e-12));
    }
  }
}

TEST_CASE("train_teacher learns a deterministic fixture") {
  // 16 memorizable examples over 4 passages.
  const EncoderConfig config = tiny_config();
  TeacherModel model = init_teacher(config, 3);
  std::vector<LabeledQA> data;
  for (int p = 0; p < 4; ++p) {
    const TokenSequence context =
        seq({5 + p, 9 + p, 13 + p, 17 + p});
    for (int q = 0; q < 4; ++q) {
      LabeledQA ex;
      ex.context = context;
      ex.question = seq({21 + q, 5 + p});
      const int target = 1 + (q % 4);
      ex.gold = Span{target, target};
      data.push_back(std::move(ex));
    }
  }

  TeacherTrainOptions opts;
  opts.epochs = 25;  // 200 optimizer steps at batch size 2
  opts.batch_size = 2;
  opts.lr = 3e-3;
  opts.holdout_fraction = 0.0;
  opts.seed = 11;

  // epoch-1 loss for the decrease check
  TeacherModel fresh = init_teacher(config, 3);
  TeacherTrainOptions one_epoch = opts;
  one_epoch.epochs = 1;
  const auto first = train_teacher(fresh, data, one_epoch);

  const auto logs = train_teacher(model, data, opts);
  CHECK(logs.back().train_loss < first.front().train_loss);

  int exact = 0;
  for (const auto& ex : data) {
    const SpanDistributionPair pred =
        teacher_predict(model, ex.context, ex.question);
    Eigen::Index s, e;
    pred.start.probs().maxCoeff(&s);
    pred.end.probs().maxCoeff(&e);
    if (static_cast<int>(s) == ex.gold.start &&
        static_cast<int>(e) == ex.gold.end)
      ++exact;
  }
  CHECK(exact >= 15);
}

TEST_CASE("train_teacher rejects an empty dataset") {
  TeacherModel model = init_teacher(tiny_config(), 4);
  CHECK_THROWS_AS(train_teacher(model, {}, {}), InvalidArgument);
}

TEST_CASE("teacher checkpoint round-trip") {
  TempDir dir("teacher");
  const TeacherModel model = init_teacher(tiny_config(), 5);
  save_teacher_checkpoint(model, dir.file("t.ckpt"));
  const TeacherModel loaded = load_teacher_checkpoint(dir.file("t.ckpt"));
  CHECK(loaded.checksum() == model.checksum());
}

TEST_CASE("labels jsonl round-trip keeps probabilities bit-exact") {
  TempDir dir("labels");
  std::vector<SparseSpanLabels> labels(2);
  labels[0].qid = "q0";
  labels[0].start_entries = {{0, 0.125}, {3, 0.4375}, {7, 0.4375}};
  labels[0].end_entries = {{3, 1.0 / 3.0}, {4, 2.0 / 3.0}};
  labels[1].qid = "q1";
  labels[1].start_entries = {{1, 0.3000000000000001}, {2, 0.6999999999999999}};
  labels[1].end_entries = {{2, 1.0}};
  save_labels_jsonl(dir.file("l.jsonl"), labels);
  const auto loaded = load_labels_jsonl(dir.file("l.jsonl"));
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(loaded[i].qid == labels[i].qid);
    REQUIRE(loaded[i].start_entries.size() == labels[i].start_entries.size());
    for (std::size_t j = 0; j < labels[i].start_entries.size(); ++j) {
      CHECK(loaded[i].start_entries[j].first ==
            labels[i].start_entries[j].first);
      // shortest round-trip decimal serialization: exact equality
      CHECK(loaded[i].start_entries[j].second ==
            labels[i].start_entries[j].second);
    }
  }
  CHECK(loaded[1].end_entries[0].second == 1.0);
}

TEST_CASE("sparse label validation") {
  SparseSpanLabels l;
  l.qid = "q";
  l.start_entries = {{0, 0.5}, {2, 0.5}};
  l.end_entries = {{2, 1.0}};
  CHECK_NOTHROW(l.validate(5, true));
  CHECK(l.unanswerable_flagged());

  SparseSpanLabels bad = l;
  bad.start_entries = {{2, 0.5}, {1, 0.5}};  // not increasing
  CHECK_THROWS_AS(bad.validate(5, true), ValidationError);
  bad = l;
  bad.start_entries = {{0, 0.5}, {9, 0.5}};  // out of range
  CHECK_THROWS_AS(bad.validate(5, true), ValidationError);
  bad = l;
  bad.end_entries = {{2, 0.9}};  // does not sum to 1
  CHECK_THROWS_AS(bad.validate(5, true), ValidationError);
  CHECK_NOTHROW(bad.validate(5, false));  // raw-mass mode allows it
}
