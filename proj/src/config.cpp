#include "qap/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace qap {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ValidationError("config: " + key + " expects an integer, got '" +
                          value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ValidationError("config: " + key + " expects a number, got '" +
                          value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ValidationError("config: " + key + " expects true/false, got '" +
                        value + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig config;
  std::istringstream is(text);
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: expected 'key = value'", line_no);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw ParseError("config: empty key", line_no);
    config.apply_override(key, value);
  }
  return config;
}

void RunConfig::apply_override(const std::string& key,
                               const std::string& value) {
  if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_int(key, value));
    seed_set = true;
  } else if (key == "corpus.passages") {
    corpus_passages = static_cast<int>(parse_int(key, value));
  } else if (key == "corpus.max_passage_tokens") {
    max_passage_tokens = static_cast<int>(parse_int(key, value));
  } else if (key == "corpus.max_question_tokens") {
    max_question_tokens = static_cast<int>(parse_int(key, value));
  } else if (key == "encoder.d") {
    encoder.d = static_cast<int>(parse_int(key, value));
  } else if (key == "encoder.layers") {
    encoder.n_layers = static_cast<int>(parse_int(key, value));
  } else if (key == "encoder.heads") {
    encoder.n_heads = static_cast<int>(parse_int(key, value));
  } else if (key == "encoder.ffn") {
    encoder.ffn_width = static_cast<int>(parse_int(key, value));
  } else if (key == "encoder.max_positions") {
    encoder.max_positions = static_cast<int>(parse_int(key, value));
  } else if (key == "encoder.dropout") {
    encoder.dropout_rate = parse_double(key, value);
  } else if (key == "generator.kind") {
    if (value != "rule" && value != "cloze")
      throw ValidationError("config: generator.kind must be rule|cloze");
    generator_kind = value;
  } else if (key == "generator.questions_per_passage") {
    generator.questions_per_passage = static_cast<int>(parse_int(key, value));
  } else if (key == "generator.nucleus_p") {
    generator.nucleus_p = parse_double(key, value);
  } else if (key == "generator.cloze_drop_prob") {
    generator.cloze_drop_prob = parse_double(key, value);
  } else if (key == "generator.unique_answers") {
    generator.unique_answers = parse_bool(key, value);
  } else if (key == "teacher.epochs") {
    teacher_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "teacher.lr") {
    teacher_lr = parse_double(key, value);
  } else if (key == "teacher.batch_size") {
    teacher_batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "teacher.holdout_fraction") {
    teacher_holdout_fraction = parse_double(key, value);
  } else if (key == "teacher.temperature") {
    teacher_temperature = parse_double(key, value);
  } else if (key == "teacher.topk") {
    teacher_topk = static_cast<int>(parse_int(key, value));
  } else if (key == "teacher.renormalize") {
    teacher_renormalize = parse_bool(key, value);
  } else if (key == "distill.epochs") {
    distill_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "distill.lr") {
    distill_lr = parse_double(key, value);
  } else if (key == "distill.labels") {
    if (value != "teacher" && value != "gold" && value != "generated")
      throw ValidationError(
          "config: distill.labels must be teacher|gold|generated");
    distill_labels = value;
  } else if (key == "distill.loss") {
    if (value != "soft" && value != "hard")
      throw ValidationError("config: distill.loss must be soft|hard");
    distill_loss = value;
  } else if (key == "eval.max_answer_len") {
    eval_max_answer_len = static_cast<int>(parse_int(key, value));
  } else if (key == "logreg.l2_lambda") {
    logreg_l2_lambda = parse_double(key, value);
  } else if (key == "finetune.epochs") {
    finetune_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "finetune.lr") {
    finetune_lr = parse_double(key, value);
  } else if (key == "finetune.output_lr_multiplier") {
    finetune_output_lr_multiplier = parse_double(key, value);
  } else if (key == "paraphrase.finetune") {
    paraphrase_finetune = parse_bool(key, value);
  } else if (key == "ner.epochs") {
    ner_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "ner.lr") {
    ner_lr = parse_double(key, value);
  } else if (key == "ner.prompt_init") {
    ner_prompt_init = parse_bool(key, value);
  } else if (key == "prompts.ner") {
    ner_prompts_path = value;
  } else if (key == "prompts.sentiment") {
    sentiment_prompts_path = value;
  } else if (key == "prompts.calibration_words") {
    calibration_words_path = value;
  } else {
    throw ValidationError("config: unknown key '" + key + "'");
  }
}

void RunConfig::validate() const {
  if (!seed_set) throw ValidationError("config: seed is mandatory");
  if (corpus_passages < 1)
    throw ValidationError("config: corpus.passages must be >= 1");
  if (max_passage_tokens < 1 || max_question_tokens < 1)
    throw ValidationError("config: token limits must be >= 1");
  EncoderConfig probe = encoder;
  probe.vocab_size = kNumReserved;  // placeholder; real value set at synth
  probe.validate();
  generator.validate();
  if (teacher_epochs < 1 || distill_epochs < 1)
    throw ValidationError("config: epochs must be >= 1");
  if (teacher_topk < 1)
    throw ValidationError("config: teacher.topk must be >= 1");
  if (teacher_holdout_fraction < 0.0 || teacher_holdout_fraction >= 1.0)
    throw ValidationError("config: teacher.holdout_fraction must be in [0,1)");
  if (eval_max_answer_len < 1)
    throw ValidationError("config: eval.max_answer_len must be >= 1");
  for (const std::string& path :
       {ner_prompts_path, sentiment_prompts_path, calibration_words_path}) {
    if (!std::filesystem::exists(path))
      throw ValidationError("config: referenced path not found: " + path);
  }
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["seed"] = std::to_string(seed);
  kv["corpus.passages"] = std::to_string(corpus_passages);
  kv["corpus.max_passage_tokens"] = std::to_string(max_passage_tokens);
  kv["corpus.max_question_tokens"] = std::to_string(max_question_tokens);
  kv["encoder.d"] = std::to_string(encoder.d);
  kv["encoder.layers"] = std::to_string(encoder.n_layers);
  kv["encoder.heads"] = std::to_string(encoder.n_heads);
  kv["encoder.ffn"] = std::to_string(encoder.ffn_width);
  kv["encoder.max_positions"] = std::to_string(encoder.max_positions);
  kv["encoder.dropout"] = format_double(encoder.dropout_rate);
  kv["generator.kind"] = generator_kind;
  kv["generator.questions_per_passage"] =
      std::to_string(generator.questions_per_passage);
  kv["generator.nucleus_p"] = format_double(generator.nucleus_p);
  kv["generator.cloze_drop_prob"] = format_double(generator.cloze_drop_prob);
  kv["generator.unique_answers"] = generator.unique_answers ? "true" : "false";
  kv["teacher.epochs"] = std::to_string(teacher_epochs);
  kv["teacher.lr"] = format_double(teacher_lr);
  kv["teacher.batch_size"] = std::to_string(teacher_batch_size);
  kv["teacher.holdout_fraction"] = format_double(teacher_holdout_fraction);
  kv["teacher.temperature"] = format_double(teacher_temperature);
  kv["teacher.topk"] = std::to_string(teacher_topk);
  kv["teacher.renormalize"] = teacher_renormalize ? "true" : "false";
  kv["distill.epochs"] = std::to_string(distill_epochs);
  kv["distill.lr"] = format_double(distill_lr);
  kv["distill.labels"] = distill_labels;
  kv["distill.loss"] = distill_loss;
  kv["eval.max_answer_len"] = std::to_string(eval_max_answer_len);
  kv["logreg.l2_lambda"] = format_double(logreg_l2_lambda);
  kv["finetune.epochs"] = std::to_string(finetune_epochs);
  kv["finetune.lr"] = format_double(finetune_lr);
  kv["finetune.output_lr_multiplier"] =
      format_double(finetune_output_lr_multiplier);
  kv["paraphrase.finetune"] = paraphrase_finetune ? "true" : "false";
  kv["ner.epochs"] = std::to_string(ner_epochs);
  kv["ner.lr"] = format_double(ner_lr);
  kv["ner.prompt_init"] = ner_prompt_init ? "true" : "false";
  kv["prompts.ner"] = ner_prompts_path;
  kv["prompts.sentiment"] = sentiment_prompts_path;
  kv["prompts.calibration_words"] = calibration_words_path;

  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t RunConfig::config_hash() const { return fnv1a(canonical()); }

std::string RunConfig::stage_subset(const std::string& stage) const {
  static const std::map<std::string, std::vector<std::string>> kPrefixes = {
      {"synth", {"corpus.", "generator.", "prompts."}},
      {"teacher", {"corpus.", "encoder.", "teacher."}},
      {"relabel", {"teacher.topk", "teacher.renormalize",
                   "teacher.temperature"}},
      {"distill", {"encoder.", "distill."}},
      {"eval_qa", {"eval."}},
      {"eval_paraphrase",
       {"logreg.", "finetune.", "paraphrase."}},
      {"eval_ner", {"ner.", "prompts.ner"}},
      {"eval_sentiment",
       {"prompts.sentiment", "prompts.calibration_words"}},
      {"report", {}},
  };
  auto it = kPrefixes.find(stage);
  if (it == kPrefixes.end())
    throw InvalidArgument("stage_subset: unknown stage " + stage);

  std::istringstream is(canonical());
  std::string line;
  std::string out = "stage = " + stage + "\nseed = " + std::to_string(seed) +
                    "\n";
  while (std::getline(is, line)) {
    for (const auto& prefix : it->second) {
      if (line.rfind(prefix, 0) == 0) {
        out += line + "\n";
        break;
      }
    }
  }
  return out;
}

}  // namespace qap
