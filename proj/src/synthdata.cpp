#include "qap/synthdata.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace qap {

namespace {

const std::vector<std::string> kFirstNames = {
    "Marie",  "Albert", "Isaac",  "Ada",   "Alan",  "Grace",
    "Niels",  "Rosalind", "Erwin", "Enrico", "Lise", "Paul",
    "Emmy",   "Carl",   "Max",    "Jean"};
const std::vector<std::string> kLastNames = {
    "Curie",   "Einstein",  "Newton", "Lovelace", "Turing", "Hopper",
    "Bohr",    "Franklin",  "Keller", "Fermi",    "Meitner", "Dirac",
    "Noether", "Gauss",     "Planck", "Darwin"};
const std::vector<std::string> kPlaces = {
    "Paris",  "Berlin", "London", "Vienna", "Geneva", "Rome",
    "Oslo",   "Madrid", "Dublin", "Prague", "Zurich", "Cambridge"};
const std::vector<std::string> kOrgStems = {"Royal",   "National", "Central",
                                            "Pacific", "Northern", "Imperial",
                                            "Atlantic", "Federal"};
const std::vector<std::string> kOrgKinds = {"Institute", "Academy",
                                            "University", "Society"};
const std::vector<std::string> kNouns = {
    "radium",    "gravity",  "penicillin", "oxygen",   "relativity",
    "computing", "telescope", "vaccines",  "electrons", "neutrons",
    "logic",     "algebra",  "calculus",   "entropy",  "magnetism",
    "polonium"};
const std::vector<std::string> kVerbs = {"discovered", "studied",  "invented",
                                         "proved",     "measured", "described",
                                         "taught",     "explained"};
const std::map<std::string, std::string> kVerbSynonyms = {
    {"discovered", "found"},      {"studied", "examined"},
    {"invented", "created"},      {"proved", "demonstrated"},
    {"measured", "quantified"},   {"described", "portrayed"},
    {"taught", "lectured"},       {"explained", "clarified"}};

const std::vector<std::string> kPositiveAdjectives = {
    "wonderful", "superb",  "delightful", "excellent",
    "brilliant", "moving",  "charming",   "gripping"};
const std::vector<std::string> kNegativeAdjectives = {
    "terrible", "dull",    "boring",  "awful",
    "clumsy",   "tedious", "shallow", "bland"};
const std::vector<std::string> kAspects = {"acting", "plot",   "script",
                                           "music",  "pacing", "dialogue",
                                           "cast",   "ending"};

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;  // BIO strings aligned with tokens
};

template <typename T>
const T& pick(const std::vector<T>& pool, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, pool.size() - 1);
  return pool[dist(rng)];
}

std::string pick_year(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(1800, 1999);
  return std::to_string(dist(rng));
}

void append(TaggedSentence& s, const std::string& token,
            const std::string& tag = "O") {
  s.tokens.push_back(token);
  s.tags.push_back(tag);
}

void append_person(TaggedSentence& s, std::mt19937_64& rng) {
  append(s, pick(kFirstNames, rng), "B-person");
  append(s, pick(kLastNames, rng), "I-person");
}

void append_place(TaggedSentence& s, std::mt19937_64& rng) {
  append(s, pick(kPlaces, rng), "B-location");
}

void append_org(TaggedSentence& s, std::mt19937_64& rng) {
  append(s, pick(kOrgStems, rng), "B-organization");
  append(s, pick(kOrgKinds, rng), "I-organization");
}

TaggedSentence make_sentence(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> template_dist(0, 5);
  TaggedSentence s;
  switch (template_dist(rng)) {
    case 0:
      append_person(s, rng);
      append(s, pick(kVerbs, rng));
      append(s, pick(kNouns, rng));
      append(s, "in");
      append(s, pick_year(rng));
      break;
    case 1:
      append_person(s, rng);
      append(s, pick(kVerbs, rng));
      append(s, pick(kNouns, rng));
      append(s, "in");
      append_place(s, rng);
      break;
    case 2:
      append(s, "the");
      append(s, pick(kNouns, rng));
      append(s, "was");
      append(s, pick(kVerbs, rng));
      append(s, "by");
      append_person(s, rng);
      break;
    case 3:
      append_person(s, rng);
      append(s, "joined");
      append(s, "the");
      append_org(s, rng);
      append(s, "in");
      append(s, pick_year(rng));
      break;
    case 4:
      append(s, "the");
      append_org(s, rng);
      append(s, "honored");
      append_person(s, rng);
      append(s, "in");
      append_place(s, rng);
      break;
    case 5:
      append_person(s, rng);
      append(s, "moved");
      append(s, "from");
      append_place(s, rng);
      append(s, "to");
      append_place(s, rng);
      append(s, "in");
      append(s, pick_year(rng));
      break;
  }
  append(s, ".");
  return s;
}

std::vector<std::string> make_paraphrase(const std::vector<std::string>& tokens,
                                         std::mt19937_64& rng) {
  std::vector<std::string> out = tokens;
  for (auto& t : out) {
    auto it = kVerbSynonyms.find(lowercase(t));
    if (it != kVerbSynonyms.end()) t = it->second;
  }
  // Sometimes rotate a trailing "in X" phrase to the front.
  std::uniform_int_distribution<int> coin(0, 1);
  if (out.size() >= 4 && coin(rng) == 1) {
    const std::size_t n = out.size();
    if (lowercase(out[n - 3]) == "in") {
      std::vector<std::string> rotated;
      rotated.push_back(out[n - 3]);
      rotated.push_back(out[n - 2]);
      rotated.insert(rotated.end(), out.begin(), out.end() - 3);
      rotated.push_back(out[n - 1]);
      out = rotated;
    }
  }
  return out;
}

double overlap_score(const std::vector<std::string>& a,
                     const std::vector<std::string>& b) {
  std::set<std::string> sa, sb;
  for (const auto& t : a) sa.insert(lowercase(t));
  for (const auto& t : b) sb.insert(lowercase(t));
  int common = 0;
  for (const auto& t : sa)
    if (sb.count(t)) ++common;
  return 2.0 * static_cast<double>(common) /
         static_cast<double>(sa.size() + sb.size());
}

std::vector<std::string> make_sentiment_sentence(int label,
                                                 std::mt19937_64& rng) {
  const auto& adjectives =
      label == 1 ? kPositiveAdjectives : kNegativeAdjectives;
  std::vector<std::string> tokens = {"the", "movie", "was",
                                     pick(adjectives, rng)};
  std::uniform_int_distribution<int> coin(0, 1);
  if (coin(rng) == 1) {
    tokens.push_back("because");
    tokens.push_back("the");
    tokens.push_back(pick(kAspects, rng));
    tokens.push_back("was");
    tokens.push_back(pick(adjectives, rng));
  }
  tokens.push_back(".");
  return tokens;
}

void add_tokens_from_json_file(const std::string& path, Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("synth: cannot open " + path);
  nlohmann::json j;
  in >> j;
  std::function<void(const nlohmann::json&)> walk =
      [&](const nlohmann::json& node) {
        if (node.is_string()) {
          // Token fields are whitespace-free; split defensively anyway.
          std::istringstream is(node.get<std::string>());
          std::string tok;
          while (is >> tok) vocab.add(tok);
        } else if (node.is_array()) {
          for (const auto& child : node) walk(child);
        } else if (node.is_object()) {
          for (const auto& [key, child] : node.items()) walk(child);
        }
      };
  walk(j);
}

}  // namespace

SynthOutputs build_synthetic_data(const RunConfig& config) {
  SynthOutputs out;
  std::mt19937_64 rng(derive_seed(config.seed, "synth-corpus"));

  // Passage sentences first; every surface form lands in the vocabulary.
  std::vector<std::vector<TaggedSentence>> passage_sentences;
  for (int p = 0; p < config.corpus_passages; ++p) {
    std::uniform_int_distribution<int> n_sent(2, 4);
    std::vector<TaggedSentence> sentences;
    const int n = n_sent(rng);
    for (int s = 0; s < n; ++s) sentences.push_back(make_sentence(rng));
    passage_sentences.push_back(std::move(sentences));
  }

  std::mt19937_64 ner_rng(derive_seed(config.seed, "synth-ner"));
  std::vector<TaggedSentence> ner_train_raw, ner_eval_raw;
  // 5 sentences per entity type for training; every template mentions a
  // person, so type coverage comes from the mix.
  for (int i = 0; i < 15; ++i) ner_train_raw.push_back(make_sentence(ner_rng));
  for (int i = 0; i < 30; ++i) ner_eval_raw.push_back(make_sentence(ner_rng));

  std::mt19937_64 para_rng(derive_seed(config.seed, "synth-paraphrase"));
  std::vector<TaggedSentence> pool;
  for (int i = 0; i < 80; ++i) pool.push_back(make_sentence(para_rng));

  std::mt19937_64 sent_rng(derive_seed(config.seed, "synth-sentiment"));
  std::vector<std::pair<std::vector<std::string>, int>> sentiment_raw;
  for (int i = 0; i < 10; ++i)
    sentiment_raw.emplace_back(make_sentiment_sentence(1, sent_rng), 1);
  for (int i = 0; i < 10; ++i)
    sentiment_raw.emplace_back(make_sentiment_sentence(0, sent_rng), 0);

  // Vocabulary: corpus + eval surfaces + question machinery + prompts.
  Vocabulary vocab;
  auto add_all = [&](const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) vocab.add(t);
  };
  for (const auto& sentences : passage_sentences)
    for (const auto& s : sentences) add_all(s.tokens);
  for (const auto& s : ner_train_raw) add_all(s.tokens);
  for (const auto& s : ner_eval_raw) add_all(s.tokens);
  for (const auto& s : pool) add_all(s.tokens);
  for (const auto& s : pool) add_all(make_paraphrase(s.tokens, para_rng));
  for (const auto& [tokens, label] : sentiment_raw) add_all(tokens);
  add_all({"who", "what", "when", "?", "product"});
  for (const auto& syn : kVerbSynonyms) vocab.add(syn.second);
  add_tokens_from_json_file(config.ner_prompts_path, vocab);
  add_tokens_from_json_file(config.sentiment_prompts_path, vocab);
  add_tokens_from_json_file(config.calibration_words_path, vocab);
  out.vocab = vocab;

  // Corpus entries with generated questions.
  GeneratorConfig gen = config.generator;
  gen.seed = derive_seed(config.seed, "qgen");
  for (int p = 0; p < config.corpus_passages; ++p) {
    Passage passage;
    passage.id = "p" + std::to_string(p);
    for (const auto& s : passage_sentences[static_cast<std::size_t>(p)])
      passage.raw_tokens.insert(passage.raw_tokens.end(), s.tokens.begin(),
                                s.tokens.end());
    passage.tokens = tokenize_tokens(passage.raw_tokens, vocab);

    const std::vector<GeneratedQA> qas =
        config.generator_kind == "rule"
            ? generate_rule_based(passage, vocab, gen)
            : generate_cloze_noise(passage, vocab, gen);

    DatasetEntry entry;
    entry.passage = passage;
    for (const auto& qa : qas) {
      QARecord rec;
      rec.passage_id = qa.passage_id;
      rec.qid = qa.qid;
      rec.question = qa.question;
      rec.answer_span = qa.answer_span;
      rec.answer_text = qa.answer_text;
      rec.answer_texts = {qa.answer_text};
      entry.qas.push_back(std::move(rec));
    }
    out.corpus.push_back(std::move(entry));
  }

  // NER sets.
  out.tag_set =
      TagSet::from_entity_types({"person", "location", "organization"});
  auto to_ner = [&](const TaggedSentence& s) {
    NerExample ex;
    ex.tokens = tokenize_tokens(s.tokens, vocab);
    for (const auto& tag : s.tags) {
      const int idx = out.tag_set.index_of(tag);
      if (idx < 0) throw ValidationError("synth: unknown tag " + tag);
      ex.tags.push_back(idx);
    }
    return ex;
  };
  for (const auto& s : ner_train_raw) out.ner_train.push_back(to_ner(s));
  for (const auto& s : ner_eval_raw) out.ner_eval.push_back(to_ner(s));

  // Paraphrase pairs: positives are synonym/rotation paraphrases, negatives
  // pair unrelated sentences. Judged pairs carry a graded overlap score.
  std::uniform_int_distribution<std::size_t> pool_dist(0, pool.size() - 1);
  auto make_pair = [&](int label) {
    SentencePair pair;
    const auto& s1 = pool[pool_dist(para_rng)].tokens;
    std::vector<std::string> s2;
    if (label == 1) {
      s2 = make_paraphrase(s1, para_rng);
    } else {
      const auto* other = &pool[pool_dist(para_rng)].tokens;
      while (other == &s1 || overlap_score(s1, *other) > 0.6)
        other = &pool[pool_dist(para_rng)].tokens;
      s2 = *other;
    }
    pair.s1 = tokenize_tokens(s1, vocab);
    pair.s2 = tokenize_tokens(s2, vocab);
    pair.label = label;
    pair.judgment = overlap_score(s1, s2);
    return pair;
  };
  for (int i = 0; i < 16; ++i) out.paraphrase_train.push_back(make_pair(1));
  for (int i = 0; i < 16; ++i) out.paraphrase_train.push_back(make_pair(0));
  for (int i = 0; i < 30; ++i) out.paraphrase_eval.push_back(make_pair(1));
  for (int i = 0; i < 30; ++i) out.paraphrase_eval.push_back(make_pair(0));
  for (int i = 0; i < 12; ++i) out.judged_pairs.push_back(make_pair(1));
  for (int i = 0; i < 12; ++i) out.judged_pairs.push_back(make_pair(0));

  for (const auto& [tokens, label] : sentiment_raw) {
    SentimentExample ex;
    ex.tokens = tokenize_tokens(tokens, vocab);
    ex.label = label;
    out.sentiment_eval.push_back(std::move(ex));
  }
  return out;
}

}  // namespace qap
