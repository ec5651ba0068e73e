#pragma once

#include "qap/bertscore.hpp"
#include "qap/config.hpp"
#include "qap/prompts.hpp"
#include "qap/qgen.hpp"

namespace qap {

// Everything the synth stage produces: a seeded toy corpus with generated
// question-answer pairs, plus the downstream evaluation sets, all sharing
// one vocabulary.
struct SynthOutputs {
  Vocabulary vocab;
  std::vector<DatasetEntry> corpus;
  TagSet tag_set;
  std::vector<NerExample> ner_train;
  std::vector<NerExample> ner_eval;
  std::vector<SentencePair> paraphrase_train;  // 16 per class
  std::vector<SentencePair> paraphrase_eval;
  std::vector<SentencePair> judged_pairs;      // graded, for layer selection
  std::vector<SentimentExample> sentiment_eval;
};

// Deterministic in config.seed. Reads the prompt files named by the config
// so every prompt token lands in the vocabulary.
SynthOutputs build_synthetic_data(const RunConfig& config);

}  // namespace qap
