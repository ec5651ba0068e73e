#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "qap/prompts.hpp"
#include "support.hpp"

using namespace qap;
using qap::test::seq;
using qap::test::TempDir;
using qap::test::tiny_config;
using qap::test::write_file;

namespace {

Vocabulary prompt_vocab() {
  return qap::test::words_vocab(
      {"who",  "what", "is",  "a",    "an",  "person", "location",
       "organization", "generic", "object", "?", "why", "it", "good",
       "bad",  "the",  "be",  "to",   "of",  "and",    "in", "that",
       "have", "i",    "movie", "was", "fine", "awful", "alpha", "beta",
       "gamma"});
}

PromptMap test_prompts(const Vocabulary& vocab) {
  PromptMap prompts;
  prompts["O"] = tokenize("what is a generic object ?", vocab);
  prompts["person"] = tokenize("who is a person ?", vocab);
  prompts["location"] = tokenize("what is a location ?", vocab);
  prompts["organization"] = tokenize("what is an organization ?", vocab);
  return prompts;
}

}  // namespace

TEST_CASE("TagSet construction and validation") {
  const TagSet tags = TagSet::from_entity_types({"person", "location"});
  CHECK(tags.size() == 5);
  CHECK(tags.tags[0] == "O");
  CHECK(tags.index_of("B-person") == 1);
  CHECK(tags.index_of("I-location") == 4);
  CHECK(tags.entity_types() == std::vector<std::string>{"person", "location"});

  TagSet bad;
  bad.tags = {"B-x"};
  CHECK_THROWS_AS(bad.validate(), ValidationError);  // no O
  bad.tags = {"O", "I-x"};
  CHECK_THROWS_AS(bad.validate(), ValidationError);  // orphan I-x
}

TEST_CASE("init_output_from_prompts") {
  const Vocabulary vocab = prompt_vocab();
  const StudentModel model = init_student(tiny_config(vocab.size()), 1);
  const TagSet tags =
      TagSet::from_entity_types({"person", "location", "organization"});
  const PromptMap prompts = test_prompts(vocab);
  const Matrix m = init_output_from_prompts(model, tags, prompts);

  REQUIRE(m.rows() == tags.size());
  REQUIRE(m.cols() == model.encoder.config.d);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    CHECK(std::abs(m.row(r).norm() - 1.0) <= 1e-9);

  // B-x and I-x share a question, so their rows are identical at init
  CHECK((m.row(tags.index_of("B-location")) -
         m.row(tags.index_of("I-location")))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  // idempotence
  const Matrix again = init_output_from_prompts(model, tags, prompts);
  CHECK((m - again).cwiseAbs().maxCoeff() == 0.0);

  PromptMap missing = prompts;
  missing.erase("location");
  CHECK_THROWS_AS(init_output_from_prompts(model, tags, missing), ConfigError);
}

TEST_CASE("zero-step predictions equal direct question scoring") {
  const Vocabulary vocab = prompt_vocab();
  const StudentModel model = init_student(tiny_config(vocab.size()), 2);
  const TagSet tags = TagSet::from_entity_types({"person", "location"});
  PromptMap prompts = test_prompts(vocab);
  const Matrix m = init_output_from_prompts(model, tags, prompts);

  const TokenSequence x = tokenize("alpha movie beta gamma", vocab);
  const std::vector<int> predicted = ner_predict_tags(model, m, x);

  const Matrix reps = encode(model.encoder, x).final_layer();
  for (int i = 1; i < x.length(); ++i) {
    int best_tag = 0;
    double best = -1e300;
    for (int t = 0; t < tags.size(); ++t) {
      const double score = reps.row(i).dot(m.row(t));
      if (score > best) {
        best = score;
        best_tag = t;
      }
    }
    CHECK(predicted[static_cast<std::size_t>(i - 1)] == best_tag);
  }
}

TEST_CASE("ner_forward") {
  const Vocabulary vocab = prompt_vocab();
  const StudentModel model = init_student(tiny_config(vocab.size()), 3);
  const TokenSequence x = tokenize("alpha beta", vocab);
  const Matrix reps = encode(model.encoder, x).final_layer();

  SUBCASE("rows are normalized distributions with [BOS] forced to O") {
    Matrix m = Matrix::Random(5, model.encoder.config.d);
    const Matrix log_probs = ner_forward(reps, m);
    REQUIRE(log_probs.rows() == x.length());
    REQUIRE(log_probs.cols() == 5);
    for (Eigen::Index r = 0; r < log_probs.rows(); ++r)
      CHECK(std::abs(log_probs.row(r).array().exp().sum() - 1.0) <= 1e-9);
    CHECK(log_probs(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::exp(log_probs(0, 1)) <= 1e-12);
  }

  SUBCASE("zero output matrix gives uniform tag distributions") {
    const Matrix m = Matrix::Zero(5, model.encoder.config.d);
    const Matrix log_probs = ner_forward(reps, m);
    for (Eigen::Index t = 0; t < 5; ++t)
      CHECK(std::exp(log_probs(1, t)) == doctest::Approx(0.2).epsilon(1e-12));
  }

  SUBCASE("scaling one row moves probability in its favor") {
    Matrix m = Matrix::Random(2, model.encoder.config.d);
    const Matrix base = ner_forward(reps, m);
    Matrix scaled = m;
    scaled.row(1) *= 2.0;
    const Matrix boosted = ner_forward(reps, scaled);
    // probabilities change, argmax only flips where row 1 overtakes
    for (Eigen::Index r = 1; r < base.rows(); ++r) {
      const bool was_one = base(r, 1) > base(r, 0);
      if (was_one)  // already argmax: scaling its logit keeps it on top when positive
        if (reps.row(r).dot(m.row(1)) > 0) CHECK(boosted(r, 1) > boosted(r, 0));
    }
  }
}

TEST_CASE("train_ner reduces loss and validates input") {
  const Vocabulary vocab = prompt_vocab();
  StudentModel model = init_student(tiny_config(vocab.size()), 4);
  const TagSet tags = TagSet::from_entity_types({"person", "location"});
  std::vector<NerExample> data;
  for (int i = 0; i < 5; ++i) {
    NerExample ex;
    ex.tokens = tokenize("alpha movie beta", vocab);
    ex.tags = {tags.index_of("B-person"), tags.index_of("O"),
               tags.index_of("B-location")};
    data.push_back(std::move(ex));
  }

  Matrix output = random_output_matrix(tags, model.encoder.config.d, 9);
  NerTrainOptions opts;
  opts.epochs = 5;
  opts.lr = 1e-3;
  opts.seed = 1;
  const std::vector<double> losses = train_ner(model, output, data, opts);
  REQUIRE(losses.size() == 6);  // starting loss + one per epoch
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);

  CHECK_THROWS_AS(train_ner(model, output, {}, opts), InvalidArgument);

  NerExample bad;
  bad.tokens = tokenize("alpha", vocab);
  bad.tags = {tags.index_of("B-person"), tags.index_of("O")};
  std::vector<NerExample> mismatched = {bad};
  CHECK_THROWS_AS(train_ner(model, output, mismatched, opts), ValidationError);
}

TEST_CASE("validate_bio") {
  const TagSet tags = TagSet::from_entity_types({"per", "loc"});
  const int O = tags.index_of("O");
  const int Bp = tags.index_of("B-per");
  const int Ip = tags.index_of("I-per");
  const int Il = tags.index_of("I-loc");
  CHECK_NOTHROW(validate_bio({Bp, Ip, O}, tags));
  CHECK_NOTHROW(validate_bio({O, O}, tags));
  CHECK_THROWS_AS(validate_bio({Ip, O}, tags), ValidationError);
  CHECK_THROWS_AS(validate_bio({Bp, Il}, tags), ValidationError);
  CHECK_THROWS_AS(validate_bio({99}, tags), ValidationError);
}

TEST_CASE("bio_decode, repair, and entity_f1") {
  SUBCASE("well-formed sequence") {
    const auto entities = bio_decode({"B-per", "I-per", "O"});
    REQUIRE(entities.size() == 1);
    CHECK(entities[0] == Entity{"per", 0, 1});
  }
  SUBCASE("orphan I is repaired to B") {
    const auto entities = bio_decode({"I-per", "O"});
    REQUIRE(entities.size() == 1);
    CHECK(entities[0] == Entity{"per", 0, 0});
  }
  SUBCASE("type switch inside a run starts a new entity") {
    const auto entities = bio_decode({"B-per", "I-loc", "I-loc"});
    REQUIRE(entities.size() == 2);
    CHECK(entities[0] == Entity{"per", 0, 0});
    CHECK(entities[1] == Entity{"loc", 1, 2});
  }
  SUBCASE("exact match scores 1") {
    const std::vector<Entity> gold = {{"per", 0, 1}, {"loc", 3, 3}};
    const PrfScores s = entity_f1(gold, gold);
    CHECK(s.precision == doctest::Approx(1.0));
    CHECK(s.recall == doctest::Approx(1.0));
    CHECK(s.f1 == doctest::Approx(1.0));
  }
  SUBCASE("partial overlap") {
    const std::vector<Entity> pred = {{"per", 0, 1}, {"loc", 2, 2}};
    const std::vector<Entity> gold = {{"per", 0, 1}, {"loc", 3, 3}};
    const PrfScores s = entity_f1(pred, gold);
    CHECK(s.precision == doctest::Approx(0.5));
    CHECK(s.recall == doctest::Approx(0.5));
    CHECK(s.f1 == doctest::Approx(0.5));
  }
}

TEST_CASE("bio encode/decode round-trips well-formed entity lists") {
  std::mt19937_64 rng(29);
  std::uniform_int_distribution<int> len_dist(1, 12);
  const std::vector<std::string> types = {"per", "loc", "org"};
  std::uniform_int_distribution<std::size_t> type_dist(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int length = len_dist(rng);
    std::vector<Entity> entities;
    int at = 0;
    while (at < length) {
      std::uniform_int_distribution<int> gap(0, 2);
      at += gap(rng);
      if (at >= length) break;
      std::uniform_int_distribution<int> span(0, 2);
      const int end = std::min(length - 1, at + span(rng));
      entities.push_back({types[type_dist(rng)], at, end});
      at = end + 1;
    }
    const auto tags = bio_encode(entities, length);
    CHECK(bio_decode(tags) == entities);
  }
}

TEST_CASE("sentiment scoring mechanics") {
  const Vocabulary vocab = prompt_vocab();
  const StudentModel model = init_student(tiny_config(vocab.size()), 5);
  const TokenSequence x = tokenize("the movie was fine", vocab);
  const TokenSequence q = tokenize("why is it good ?", vocab);

  SUBCASE("additivity: equals independent start and end maxima") {
    const QuestionEmbedding qe = question_embed(model, q);
    const Matrix reps = encode(model.encoder, x).final_layer();
    const double expected =
        (reps * qe.f_start).maxCoeff() + (reps * qe.f_end).maxCoeff();
    CHECK(sentiment_score(model, x, q) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("deterministic in eval mode") {
    CHECK(sentiment_score(model, x, q) ==
          doctest::Approx(sentiment_score(model, x, q)).epsilon(0));
  }
  SUBCASE("single-token input works") {
    const TokenSequence one = tokenize("fine", vocab);
    CHECK(std::isfinite(sentiment_score(model, one, q)));
  }
}

TEST_CASE("calibration constants") {
  const Vocabulary vocab = prompt_vocab();
  const StudentModel model = init_student(tiny_config(vocab.size()), 6);
  SentimentPrompt prompt;
  prompt.positive = tokenize("why is it good ?", vocab);
  prompt.negative = tokenize("why is it bad ?", vocab);
  ContentFreeWords words{"top10-english",
                         {"the", "be", "to", "of", "and", "a", "in", "that",
                          "have", "I"}};

  const CalibrationConstants calib =
      compute_calibration(model, prompt, words, vocab);

  SUBCASE("mean calibrated score over W is 0 per label") {
    double sum0 = 0.0, sum1 = 0.0;
    for (const auto& w : words.words) {
      const TokenSequence x = tokenize(w, vocab);
      sum0 += sentiment_score(model, x, prompt.negative) - calib.c0;
      sum1 += sentiment_score(model, x, prompt.positive) - calib.c1;
    }
    CHECK(std::abs(sum0 / 10.0) <= 1e-9);
    CHECK(std::abs(sum1 / 10.0) <= 1e-9);
  }

  SUBCASE("invariant to word-list order") {
    ContentFreeWords reversed = words;
    std::reverse(reversed.words.begin(), reversed.words.end());
    const CalibrationConstants r =
        compute_calibration(model, prompt, reversed, vocab);
    CHECK(r.c0 == doctest::Approx(calib.c0).epsilon(1e-12));
    CHECK(r.c1 == doctest::Approx(calib.c1).epsilon(1e-12));
  }

  SUBCASE("empty word list is invalid") {
    ContentFreeWords empty{"none", {}};
    CHECK_THROWS_AS(compute_calibration(model, prompt, empty, vocab),
                    InvalidArgument);
  }
}

TEST_CASE("predict_sentiment") {
  const Vocabulary vocab = prompt_vocab();
  const StudentModel model = init_student(tiny_config(vocab.size()), 7);
  SentimentPrompt prompt;
  prompt.positive = tokenize("why is it good ?", vocab);
  prompt.negative = tokenize("why is it bad ?", vocab);
  const TokenSequence x = tokenize("the movie was awful", vocab);
  CalibrationConstants calib{1.0, 2.0, "test"};

  const auto [label, margin] = predict_sentiment(model, x, prompt, calib);
  const double s0 = sentiment_score(model, x, prompt.negative) - calib.c0;
  const double s1 = sentiment_score(model, x, prompt.positive) - calib.c1;
  CHECK(label == (s1 - s0 > 0 ? 1 : 0));
  CHECK(margin == doctest::Approx(s1 - s0).epsilon(1e-12));

  SUBCASE("shared constant added to both calibrated scores keeps the label") {
    CalibrationConstants shifted = calib;
    shifted.c0 -= 5.0;  // adds +5 to both calibrated scores
    shifted.c1 -= 5.0;
    const auto [l2, m2] = predict_sentiment(model, x, prompt, shifted);
    CHECK(l2 == label);
    CHECK(m2 == doctest::Approx(margin).epsilon(1e-9));
  }

  SUBCASE("margin is antisymmetric under swapping the questions") {
    SentimentPrompt swapped;
    swapped.positive = prompt.negative;
    swapped.negative = prompt.positive;
    CalibrationConstants swapped_calib{calib.c1, calib.c0, "test"};
    const auto [l3, m3] = predict_sentiment(model, x, swapped, swapped_calib);
    CHECK(m3 == doctest::Approx(-margin).epsilon(1e-12));
  }

  SUBCASE("exact tie resolves to label 0") {
    // calibrate so both scores become exactly 0
    CalibrationConstants exact{sentiment_score(model, x, prompt.negative),
                               sentiment_score(model, x, prompt.positive),
                               "tie"};
    const auto [l4, m4] = predict_sentiment(model, x, prompt, exact);
    CHECK(l4 == 0);
    CHECK(m4 == 0.0);
  }
}

TEST_CASE("extract_rationale matches exhaustive search on 500 fixtures") {
  const Vocabulary vocab = prompt_vocab();
  const StudentModel model = init_student(tiny_config(vocab.size()), 8);
  const TokenSequence q = tokenize("why is it good ?", vocab);
  const QuestionEmbedding qe = question_embed(model, q);

  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len(1, 10);
  std::uniform_int_distribution<int> tok(5, 30);
  std::uniform_int_distribution<int> max_dist(1, 6);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> body;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) body.push_back(tok(rng));
    const TokenSequence x = seq(body);
    const int max_tokens = max_dist(rng);
    const auto [span, text] = extract_rationale(model, vocab, x, q, max_tokens);

    const Matrix reps = encode(model.encoder, x).final_layer();
    const Vector ss = reps * qe.f_start;
    const Vector es = reps * qe.f_end;
    Span best{1, 1};
    double best_score = -1e300;
    for (int i = 1; i < x.length(); ++i)
      for (int j = i; j < std::min(x.length(), i + max_tokens); ++j)
        if (ss[i] + es[j] > best_score) {
          best_score = ss[i] + es[j];
          best = {i, j};
        }
    CHECK(span == best);
    CHECK(span.start >= 1);  // never includes [BOS]
    CHECK(span.end - span.start + 1 <= max_tokens);
  }
}

TEST_CASE("prompt and dataset file loading") {
  TempDir dir("prompts");
  const Vocabulary vocab = prompt_vocab();

  write_file(dir.file("ner.json"),
             R"({"O": ["what", "is", "a", "generic", "object", "?"],
                 "person": ["who", "is", "a", "person", "?"]})");
  const PromptMap prompts = load_ner_prompts(dir.file("ner.json"), vocab);
  CHECK(prompts.count("O") == 1);
  CHECK(prompts.at("person").length() == 6);

  write_file(dir.file("sent.json"),
             R"([{"positive": ["why", "is", "it", "good", "?"],
                  "negative": ["why", "is", "it", "bad", "?"]}])");
  const auto sp = load_sentiment_prompts(dir.file("sent.json"), vocab);
  REQUIRE(sp.size() == 1);
  CHECK(detokenize(sp[0].positive, vocab) == "why is it good ?");

  write_file(dir.file("identical.json"),
             R"([{"positive": ["why", "?"], "negative": ["why", "?"]}])");
  CHECK_THROWS_AS(load_sentiment_prompts(dir.file("identical.json"), vocab),
                  ValidationError);

  write_file(dir.file("words.json"),
             R"({"id": "w", "words": ["the", "a"]})");
  const ContentFreeWords words =
      load_content_free_words(dir.file("words.json"));
  CHECK(words.words.size() == 2);

  write_file(dir.file("ner_data.jsonl"),
             R"({"tokens": ["alpha", "beta"], "tags": ["B-person", "O"]})"
             "\n");
  const TagSet tags = TagSet::from_entity_types({"person"});
  const auto ner = load_ner_jsonl(dir.file("ner_data.jsonl"), vocab, tags);
  REQUIRE(ner.size() == 1);
  CHECK(ner[0].tags == std::vector<int>{1, 0});

  write_file(dir.file("bad_tags.jsonl"),
             R"({"tokens": ["alpha"], "tags": ["B-nope"]})"
             "\n");
  CHECK_THROWS_AS(load_ner_jsonl(dir.file("bad_tags.jsonl"), vocab, tags),
                  ValidationError);

  write_file(dir.file("sentiment.jsonl"),
             R"({"tokens": ["the", "movie"], "label": 1})"
             "\n");
  const auto sents = load_sentiment_jsonl(dir.file("sentiment.jsonl"), vocab);
  REQUIRE(sents.size() == 1);
  CHECK(sents[0].label == 1);
}
