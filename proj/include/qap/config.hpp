#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qap/encoder.hpp"
#include "qap/qgen.hpp"
#include "qap/student.hpp"

namespace qap {

// Effective run configuration: built-in defaults overridden by a key/value
// config file ("key = value", '#' comments) and CLI flags. All knobs hash
// into the run's config hash.
struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;

  int corpus_passages = 64;
  int max_passage_tokens = 456;
  int max_question_tokens = 50;

  EncoderConfig encoder;  // vocab_size filled at synth time

  std::string generator_kind = "rule";  // rule | cloze
  GeneratorConfig generator;

  int teacher_epochs = 12;
  double teacher_lr = 1e-3;
  int teacher_batch_size = 8;
  double teacher_holdout_fraction = 0.1;
  double teacher_temperature = 1.0;
  int teacher_topk = 8;
  bool teacher_renormalize = true;

  int distill_epochs = 2;
  double distill_lr = 1e-3;
  std::string distill_labels = "teacher";  // teacher | gold | generated
  std::string distill_loss = "soft";       // soft | hard

  int eval_max_answer_len = 30;

  double logreg_l2_lambda = 1.0;
  int finetune_epochs = 20;
  double finetune_lr = 1e-5;
  double finetune_output_lr_multiplier = 1000.0;
  bool paraphrase_finetune = true;

  int ner_epochs = 20;
  double ner_lr = 3e-4;
  bool ner_prompt_init = true;

  std::string ner_prompts_path = "data/ner_prompts.json";
  std::string sentiment_prompts_path = "data/sentiment_prompts.json";
  std::string calibration_words_path = "data/content_free_words.json";

  // Parses and overlays a config file onto the defaults.
  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);

  void apply_override(const std::string& key, const std::string& value);
  void validate() const;  // seed mandatory, referenced paths resolvable

  // Sorted "key = value" lines of every effective setting.
  std::string canonical() const;
  std::uint64_t config_hash() const;

  // Canonical subset for one pipeline stage (always includes the seed).
  std::string stage_subset(const std::string& stage) const;
};

}  // namespace qap
