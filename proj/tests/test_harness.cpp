#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "qap/metrics.hpp"
#include "qap/pipeline.hpp"
#include "support.hpp"

using namespace qap;
using qap::test::TempDir;
using qap::test::write_file;

namespace {

std::string data_path(const char* name) {
  return std::string(QAP_SOURCE_DIR) + "/data/" + name;
}

// A configuration small enough for harness tests to run in seconds.
RunConfig small_config(std::uint64_t seed) {
  RunConfig config;
  config.apply_override("seed", std::to_string(seed));
  config.corpus_passages = 6;
  config.encoder.d = 16;
  config.encoder.n_layers = 2;
  config.encoder.n_heads = 2;
  config.encoder.ffn_width = 32;
  config.generator.questions_per_passage = 4;
  config.teacher_epochs = 2;
  config.distill_epochs = 2;
  config.finetune_epochs = 2;
  config.ner_epochs = 2;
  config.paraphrase_finetune = false;
  config.ner_prompts_path = data_path("ner_prompts.json");
  config.sentiment_prompts_path = data_path("sentiment_prompts.json");
  config.calibration_words_path = data_path("content_free_words.json");
  return config;
}

}  // namespace

TEST_CASE("exact_match and token_f1") {
  CHECK(exact_match("the cat", {"cat"}) == 0);
  CHECK(token_f1("the cat", {"cat"}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(exact_match("cat", {"cat"}) == 1);
  CHECK(token_f1("cat", {"cat"}) == doctest::Approx(1.0));
  CHECK(exact_match("", {"x"}) == 0);
  CHECK(token_f1("", {"x"}) == doctest::Approx(0.0));
  CHECK(exact_match("The  Cat", {"the cat"}) == 1);  // normalization
  CHECK(token_f1("a b", {"b c", "a b"}) == doctest::Approx(1.0));  // max over golds
  CHECK_THROWS_AS(exact_match("x", {}), InvalidArgument);
}

TEST_CASE("token_f1 matches an independent reference on 50 fixtures") {
  // reference implementation written against the definition directly
  auto reference_f1 = [](const std::string& pred,
                         const std::vector<std::string>& golds) {
    auto toks = [](const std::string& s) {
      std::istringstream is(lowercase(s));
      std::vector<std::string> out;
      std::string t;
      while (is >> t) out.push_back(t);
      return out;
    };
    double best = 0.0;
    const auto p = toks(pred);
    for (const auto& g_text : golds) {
      const auto g = toks(g_text);
      if (p.empty() && g.empty()) {
        best = std::max(best, 1.0);
        continue;
      }
      if (p.empty() || g.empty()) continue;
      std::map<std::string, long> want;
      for (const auto& t : g) want[t]++;
      long overlap = 0;
      std::map<std::string, long> used;
      for (const auto& t : p) {
        if (want.count(t) && used[t] < want[t]) {
          used[t]++;
          overlap++;
        }
      }
      if (overlap == 0) continue;
      const double prec = double(overlap) / double(p.size());
      const double rec = double(overlap) / double(g.size());
      best = std::max(best, 2 * prec * rec / (prec + rec));
    }
    return best;
  };

  std::mt19937_64 rng(41);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
  std::uniform_int_distribution<std::size_t> w(0, words.size() - 1);
  std::uniform_int_distribution<int> len(0, 6);
  auto sentence = [&] {
    std::string s;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += words[w(rng)];
    }
    return s;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const std::string pred = sentence();
    const std::vector<std::string> golds = {sentence(), sentence()};
    CHECK(std::abs(token_f1(pred, golds) - reference_f1(pred, golds)) <=
          1e-12);
  }
}

TEST_CASE("config parsing, validation, and hashing") {
  SUBCASE("defaults plus overrides") {
    RunConfig config = RunConfig::from_text(
        "# comment\n"
        "seed = 9\n"
        "encoder.d = 32\n"
        "distill.loss = hard\n");
    CHECK(config.seed == 9);
    CHECK(config.encoder.d == 32);
    CHECK(config.distill_loss == "hard");
    CHECK(config.corpus_passages == 64);  // untouched default
  }
  SUBCASE("seed is mandatory") {
    RunConfig config = RunConfig::from_text("encoder.d = 32\n");
    CHECK_THROWS_AS(config.validate(), ValidationError);
  }
  SUBCASE("unknown key") {
    CHECK_THROWS_AS(RunConfig::from_text("nope = 1\n"), ValidationError);
  }
  SUBCASE("bad values") {
    CHECK_THROWS_AS(RunConfig::from_text("seed = banana\n"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_text("distill.loss = squishy\n"),
                    ValidationError);
    CHECK_THROWS_AS(RunConfig::from_text("seed 9\n"), ParseError);
  }
  SUBCASE("missing referenced path fails validation") {
    RunConfig config = small_config(1);
    config.ner_prompts_path = "/definitely/not/here.json";
    CHECK_THROWS_AS(config.validate(), ValidationError);
  }
  SUBCASE("hash changes with any knob") {
    RunConfig a = small_config(1);
    RunConfig b = small_config(1);
    CHECK(a.config_hash() == b.config_hash());
    b.apply_override("distill.loss", "hard");
    CHECK(a.config_hash() != b.config_hash());
    RunConfig c = small_config(2);
    CHECK(a.config_hash() != c.config_hash());
  }
  SUBCASE("stage subsets include the seed") {
    RunConfig a = small_config(1);
    RunConfig b = small_config(2);
    for (const char* stage :
         {"synth", "teacher", "relabel", "distill", "eval_qa"})
      CHECK(a.stage_subset(stage) != b.stage_subset(stage));
  }
}

TEST_CASE("pipeline: full run, caching, and invalidation") {
  TempDir dir("pipeline");
  RunConfig config = small_config(3);

  Pipeline first(config, dir.path() / "run");
  const nlohmann::json report = first.run_all();

  CHECK(report.contains("metrics"));
  CHECK(report["metrics"].contains("qa"));
  CHECK(report["metrics"].contains("paraphrase"));
  CHECK(report["metrics"].contains("ner"));
  CHECK(report["metrics"].contains("sentiment"));
  CHECK(report["config_hash"] == to_hex(config.config_hash()));
  for (const auto& [stage, count] : first.executions()) CHECK(count == 1);

  SUBCASE("re-run with unchanged config executes zero stages") {
    Pipeline second(config, dir.path() / "run");
    second.run_all();
    int executed = 0;
    for (const auto& [stage, count] : second.executions()) executed += count;
    CHECK(executed == 0);
  }

  SUBCASE("seed change invalidates every stage") {
    RunConfig reseeded = small_config(4);
    Pipeline second(reseeded, dir.path() / "run");
    second.run_all();
    for (const auto& [stage, count] : second.executions()) CHECK(count == 1);
  }

  SUBCASE("tampered artifact with matching key is a staleness error") {
    // corrupt a recorded output without touching the manifest
    std::ofstream out(dir.path() / "run" / "relabel" / "labels.jsonl",
                      std::ios::app);
    out << "\n";
    out.close();
    Pipeline second(config, dir.path() / "run");
    CHECK_THROWS_AS(second.run_all(), StaleArtifact);
  }

  SUBCASE("report verification catches config tampering") {
    CHECK_NOTHROW(verify_report(dir.path() / "run" / "report.json", config));
    RunConfig tampered = config;
    tampered.apply_override("distill.lr", "0.5");
    CHECK_THROWS_AS(verify_report(dir.path() / "run" / "report.json", tampered),
                    ValidationError);
  }
}

TEST_CASE("pipeline: missing prerequisites fail cleanly") {
  TempDir dir("nopre");
  RunConfig config = small_config(5);
  Pipeline pipeline(config, dir.path() / "run");
  CHECK_THROWS_AS(pipeline.run_distill(), IoError);
}

TEST_CASE("run lock enforces single ownership") {
  TempDir dir("lock");
  RunLock lock(dir.path());
  CHECK_THROWS_AS(RunLock{dir.path()}, Error);
}

TEST_CASE("cli exit codes") {
  const std::string cli = std::string(QAP_CLI_PATH);
  TempDir dir("cli");

  SUBCASE("unknown flag exits 2 with usage text") {
    const std::string cmd = cli + " synth-data --definitely-not-a-flag 2> " +
                            dir.file("err.txt") + " > /dev/null";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 2);
    std::ifstream err(dir.file("err.txt"));
    std::string text((std::istreambuf_iterator<char>(err)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("Usage") != std::string::npos);
  }

  SUBCASE("missing subcommand exits 2") {
    const int status =
        std::system((cli + " > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(status) == 2);
  }

  SUBCASE("validation error exits 2") {
    write_file(dir.file("bad.cfg"), "encoder.d = 16\n");  // no seed
    const int status = std::system(
        (cli + " synth-data --config " + dir.file("bad.cfg") +
         " --out " + dir.file("out") + " > /dev/null 2>&1")
            .c_str());
    CHECK(WEXITSTATUS(status) == 2);
  }

  SUBCASE("--help exits 0") {
    const int status = std::system((cli + " --help > /dev/null").c_str());
    CHECK(WEXITSTATUS(status) == 0);
  }

  SUBCASE("grad-check exits 0 and prints per-loss lines") {
    const std::string out_file = dir.file("gc.txt");
    const int status =
        std::system((cli + " grad-check > " + out_file).c_str());
    CHECK(WEXITSTATUS(status) == 0);
    std::ifstream in(out_file);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("teacher_loss") != std::string::npos);
    CHECK(text.find("finetune_loss") != std::string::npos);
    CHECK(text.find("[FAIL]") == std::string::npos);
  }
}
