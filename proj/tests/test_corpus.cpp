#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "qap/corpus.hpp"
#include "support.hpp"

using namespace qap;
using qap::test::TempDir;
using qap::test::write_file;

TEST_CASE("tokenize basics") {
  Vocabulary v = qap::test::words_vocab({"the", "cat"});
  SUBCASE("empty input is just [BOS]") {
    const TokenSequence s = tokenize("", v);
    CHECK(s.ids == std::vector<int>{kBos});
  }
  SUBCASE("direct lookup") {
    const TokenSequence s = tokenize("the cat", v);
    CHECK(s.ids == std::vector<int>{kBos, v.id("the"), v.id("cat")});
  }
  SUBCASE("unknown fallback") {
    const TokenSequence s = tokenize("the zzzqx", v);
    CHECK(s.ids == std::vector<int>{kBos, v.id("the"), kUnk});
  }
  SUBCASE("lowercasing") {
    CHECK(tokenize("The CAT", v).ids == tokenize("the cat", v).ids);
  }
}

TEST_CASE("tokenize/detokenize round-trips in-vocabulary text") {
  Vocabulary v = qap::test::words_vocab(
      {"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "."});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(0, 12);
  const std::vector<std::string> words = {"alpha", "beta",    "gamma", "delta",
                                          "epsilon", "zeta", "."};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      if (i) text += ' ';
      text += words[pick(rng)];
    }
    CHECK(detokenize(tokenize(text, v), v) == text);
  }
}

TEST_CASE("chunk_passages greedy rule") {
  CHECK(chunk_passages({200, 200, 100}, 456) ==
        std::vector<std::vector<int>>{{0, 1}, {2}});
  CHECK(chunk_passages({456}, 456) == std::vector<std::vector<int>>{{0}});
  CHECK(chunk_passages({100, 100, 100, 100, 100}, 456) ==
        std::vector<std::vector<int>>{{0, 1, 2, 3}, {4}});
  CHECK(chunk_passages({}, 456).empty());
  CHECK_THROWS_AS(chunk_passages({457}, 456), InvalidArgument);
  CHECK_THROWS_AS(chunk_passages({1}, 0), InvalidArgument);
}

TEST_CASE("chunk_passages properties") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n_sent(0, 30);
  std::uniform_int_distribution<int> sent_len(1, 456);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> lengths;
    const int n = n_sent(rng);
    for (int i = 0; i < n; ++i) lengths.push_back(sent_len(rng));
    const auto chunks = chunk_passages(lengths, 456);
    std::vector<int> flattened;
    for (const auto& chunk : chunks) {
      int total = 0;
      for (int idx : chunk) {
        total += lengths[static_cast<std::size_t>(idx)];
        flattened.push_back(idx);
      }
      CHECK(total <= 456);
    }
    std::vector<int> expected(lengths.size());
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(flattened == expected);
  }
}

namespace {

Vocabulary dataset_vocab() {
  return qap::test::words_vocab({"marie", "curie", "discovered", "radium",
                                 "in", "paris", ".", "who", "what", "?"});
}

std::string valid_line() {
  return R"({"id": "p0", "context": ["Marie", "Curie", "discovered", "radium", "."], "qas": [{"qid": "q0", "question": ["who", "discovered", "radium", "?"], "answers": ["marie curie"], "span": [1, 2]}, {"qid": "q1", "question": ["what", "?"], "answers": ["radium"], "span": [4, 4]}]})";
}

}  // namespace

TEST_CASE("load_dataset fixture and errors") {
  TempDir dir("corpus");
  Vocabulary v = dataset_vocab();

  SUBCASE("empty file gives empty list") {
    write_file(dir.file("empty.jsonl"), "");
    CHECK(load_dataset(dir.file("empty.jsonl"), v).empty());
  }

  SUBCASE("one passage with two valid questions") {
    write_file(dir.file("ok.jsonl"), valid_line() + "\n");
    const auto entries = load_dataset(dir.file("ok.jsonl"), v);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].passage.id == "p0");
    REQUIRE(entries[0].qas.size() == 2);
    CHECK(entries[0].qas[0].answer_span == Span{1, 2});
    CHECK(entries[0].qas[0].answer_text == "marie curie");
    CHECK(entries[0].qas[1].answer_span == Span{4, 4});
  }

  SUBCASE("span covering [BOS] is invalid") {
    write_file(
        dir.file("bos.jsonl"),
        R"({"id": "p0", "context": ["radium"], "qas": [{"qid": "qx", "question": ["what", "?"], "answers": ["radium"], "span": [0, 0]}]})"
        "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir.file("bos.jsonl"), v),
                         doctest::Contains("qx"), ValidationError);
  }

  SUBCASE("malformed JSON reports the line number") {
    write_file(dir.file("bad.jsonl"), valid_line() + "\n{not json\n");
    try {
      load_dataset(dir.file("bad.jsonl"), v);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }

  SUBCASE("span/answer mismatch is invalid") {
    write_file(
        dir.file("mismatch.jsonl"),
        R"({"id": "p0", "context": ["Marie", "Curie"], "qas": [{"qid": "qm", "question": ["who", "?"], "answers": ["radium"], "span": [1, 1]}]})"
        "\n");
    CHECK_THROWS_AS(load_dataset(dir.file("mismatch.jsonl"), v),
                    ValidationError);
  }

  SUBCASE("over-long question is rejected") {
    std::string q = "[";
    for (int i = 0; i < 51; ++i) {
      if (i) q += ", ";
      q += "\"who\"";
    }
    q += "]";
    write_file(
        dir.file("long.jsonl"),
        R"({"id": "p0", "context": ["radium"], "qas": [{"qid": "ql", "question": )" +
            q + R"(, "answers": [], "span": null}]})" + "\n");
    CHECK_THROWS_AS(load_dataset(dir.file("long.jsonl"), v), ValidationError);
  }
}

TEST_CASE("load_dataset is total over malformed inputs") {
  TempDir dir("fuzz");
  Vocabulary v = dataset_vocab();
  std::mt19937_64 rng(99);
  const std::vector<std::string> fragments = {
      valid_line(),
      "{",
      "[]",
      "null",
      R"({"id": 3})",
      R"({"id": "p", "context": "nope"})",
      R"({"id": "p", "context": [3]})",
      R"({"id": "p", "context": ["a"], "qas": {}})",
      R"({"id": "p", "context": ["a"], "qas": [{}]})",
      R"({"id": "p", "context": ["a"], "qas": [{"qid": "q"}]})",
      R"({"id": "p", "context": ["a"], "qas": [{"qid": "q", "question": ["who"], "span": [9, 9], "answers": ["a"]}]})",
      R"({"id": "p", "context": ["a"], "qas": [{"qid": "q", "question": ["who"], "span": [1], "answers": ["a"]}]})",
      "\"",
      "12 12",
  };
  std::uniform_int_distribution<std::size_t> pick(0, fragments.size() - 1);
  std::uniform_int_distribution<int> n_lines(1, 5);
  std::uniform_int_distribution<int> mutate(0, 30);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string content;
    const int n = n_lines(rng);
    for (int i = 0; i < n; ++i) {
      std::string line = fragments[pick(rng)];
      const int cut = mutate(rng);
      if (cut > 0 && static_cast<std::size_t>(cut) < line.size())
        line = line.substr(0, line.size() - static_cast<std::size_t>(cut));
      content += line + "\n";
    }
    const std::string path = dir.file("fuzz.jsonl");
    write_file(path, content);
    try {
      (void)load_dataset(path, v);
    } catch (const ParseError&) {
    } catch (const ValidationError&) {
    } catch (const InvalidArgument&) {
    }
    // anything else (std::bad_alloc, segfault, uncaught json exception)
    // fails the test by escaping
  }
  CHECK(true);
}

TEST_CASE("dataset save/load round-trip") {
  TempDir dir("roundtrip");
  Vocabulary v = dataset_vocab();
  write_file(dir.file("ok.jsonl"), valid_line() + "\n");
  const auto entries = load_dataset(dir.file("ok.jsonl"), v);
  save_dataset(dir.file("copy.jsonl"), entries, v);
  const auto reloaded = load_dataset(dir.file("copy.jsonl"), v);
  REQUIRE(reloaded.size() == entries.size());
  CHECK(reloaded[0].passage.tokens.ids == entries[0].passage.tokens.ids);
  REQUIRE(reloaded[0].qas.size() == entries[0].qas.size());
  for (std::size_t i = 0; i < entries[0].qas.size(); ++i) {
    CHECK(reloaded[0].qas[i].question.ids == entries[0].qas[i].question.ids);
    CHECK(reloaded[0].qas[i].answer_span == entries[0].qas[i].answer_span);
  }
}

TEST_CASE("vocabulary serialization and reserved tokens") {
  TempDir dir("vocab");
  Vocabulary v = dataset_vocab();
  save_vocabulary(dir.file("vocab.json"), v);
  const Vocabulary loaded = load_vocabulary(dir.file("vocab.json"));
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id("marie") == v.id("marie"));
  CHECK(loaded.id("[BLANK]") == kBlank);
  CHECK(loaded.id("[SEP]") == kSep);
  CHECK(loaded.token(kBos) == "[BOS]");
}
