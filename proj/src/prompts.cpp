#include "qap/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace qap {

using nlohmann::json;

TagSet TagSet::from_entity_types(const std::vector<std::string>& types) {
  TagSet ts;
  ts.tags.push_back("O");
  for (const auto& t : types) {
    ts.tags.push_back("B-" + t);
    ts.tags.push_back("I-" + t);
  }
  ts.validate();
  return ts;
}

int TagSet::index_of(const std::string& tag) const {
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == tag) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> TagSet::entity_types() const {
  std::vector<std::string> types;
  for (const auto& t : tags)
    if (t.rfind("B-", 0) == 0) types.push_back(t.substr(2));
  return types;
}

void TagSet::validate() const {
  if (index_of("O") < 0) throw ValidationError("TagSet: missing O tag");
  std::set<std::string> names(tags.begin(), tags.end());
  if (names.size() != tags.size())
    throw ValidationError("TagSet: duplicate tags");
  for (const auto& t : tags) {
    if (t == "O") continue;
    if (t.rfind("B-", 0) != 0 && t.rfind("I-", 0) != 0)
      throw ValidationError("TagSet: tag " + t + " is not O/B-x/I-x");
    if (t.rfind("I-", 0) == 0 && !names.count("B-" + t.substr(2)))
      throw ValidationError("TagSet: " + t + " lacks a matching B- tag");
  }
}

PromptMap load_ner_prompts(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("load_ner_prompts: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("ner prompts: ") + e.what(), 0);
  }
  PromptMap prompts;
  for (const auto& [key, value] : j.items()) {
    std::vector<std::string> tokens;
    for (const auto& t : value) tokens.push_back(t.get<std::string>());
    prompts[key] = tokenize_tokens(tokens, vocab);
  }
  return prompts;
}

Matrix init_output_from_prompts(const StudentModel& model, const TagSet& tags,
                                const PromptMap& prompts) {
  tags.validate();
  const int d = model.encoder.config.d;
  Matrix m(tags.size(), d);
  for (int t = 0; t < tags.size(); ++t) {
    const std::string& tag = tags.tags[static_cast<std::size_t>(t)];
    const std::string key = tag == "O" ? "O" : tag.substr(2);
    auto it = prompts.find(key);
    if (it == prompts.end())
      throw ConfigError("init_output_from_prompts: no prompt for " + key);
    const QuestionEmbedding qe = question_embed(model, it->second);
    const double norm = qe.f_start.norm();
    if (norm == 0.0)
      throw DegenerateInput("init_output_from_prompts: zero question embedding");
    m.row(t) = (qe.f_start / norm).transpose();
  }
  return m;
}

Matrix random_output_matrix(const TagSet& tags, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  Matrix m(tags.size(), d);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

Matrix ner_forward(const Matrix& reps, const Matrix& output_matrix) {
  if (reps.cols() != output_matrix.cols())
    throw InvalidArgument("ner_forward: dimension mismatch");
  Matrix logits = reps * output_matrix.transpose();  // L x T
  // [BOS] carries no tag; force it to O without leaving the log domain.
  logits.row(0).setConstant(-1e30);
  logits(0, 0) = 0.0;
  Matrix log_probs(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    log_probs.row(r) = logits.row(r).array() - lse;
  }
  return log_probs;
}

std::vector<NerExample> load_ner_jsonl(const std::string& path,
                                       const Vocabulary& vocab,
                                       const TagSet& tags) {
  std::ifstream in(path);
  if (!in) throw IoError("load_ner_jsonl: cannot open " + path);
  std::vector<NerExample> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("ner data: ") + e.what(), line_no);
    }
    NerExample ex;
    std::vector<std::string> tokens;
    for (const auto& t : j.at("tokens")) tokens.push_back(t.get<std::string>());
    ex.tokens = tokenize_tokens(tokens, vocab);
    for (const auto& t : j.at("tags")) {
      const int idx = tags.index_of(t.get<std::string>());
      if (idx < 0)
        throw ValidationError("ner data: unknown tag " +
                              t.get<std::string>());
      ex.tags.push_back(idx);
    }
    if (ex.tags.size() != tokens.size())
      throw ValidationError("ner data: token/tag length mismatch");
    validate_bio(ex.tags, tags);
    out.push_back(std::move(ex));
  }
  return out;
}

void save_ner_jsonl(const std::string& path,
                    const std::vector<NerExample>& examples,
                    const Vocabulary& vocab, const TagSet& tags) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_ner_jsonl: cannot open " + path);
  for (const auto& ex : examples) {
    json j;
    json tokens = json::array();
    for (std::size_t i = 1; i < ex.tokens.ids.size(); ++i)
      tokens.push_back(vocab.token(ex.tokens.ids[i]));
    json jtags = json::array();
    for (int t : ex.tags)
      jtags.push_back(tags.tags[static_cast<std::size_t>(t)]);
    j["tokens"] = std::move(tokens);
    j["tags"] = std::move(jtags);
    out << j.dump() << "\n";
  }
}

void validate_bio(const std::vector<int>& tags, const TagSet& tag_set) {
  std::string prev = "O";
  for (int t : tags) {
    if (t < 0 || t >= tag_set.size())
      throw ValidationError("validate_bio: tag index out of range");
    const std::string& tag = tag_set.tags[static_cast<std::size_t>(t)];
    if (tag.rfind("I-", 0) == 0) {
      const std::string type = tag.substr(2);
      const bool continues = (prev.rfind("B-", 0) == 0 ||
                              prev.rfind("I-", 0) == 0) &&
                             prev.substr(2) == type;
      if (!continues)
        throw ValidationError("validate_bio: orphan " + tag);
    }
    prev = tag;
  }
}

std::vector<double> train_ner(StudentModel& model, Matrix& output_matrix,
                              const std::vector<NerExample>& data,
                              const NerTrainOptions& opts) {
  if (data.empty()) throw InvalidArgument("train_ner: empty dataset");
  for (const auto& ex : data) {
    if (static_cast<int>(ex.tags.size()) != ex.tokens.length() - 1)
      throw ValidationError("train_ner: token/tag length mismatch");
  }

  std::vector<ParamRef> refs = model.encoder.param_refs();
  std::vector<Matrix*> param_ptrs;
  for (auto& r : refs) param_ptrs.push_back(r.value);
  param_ptrs.push_back(&output_matrix);
  AdamOptimizer adam(param_ptrs, {.lr = opts.lr});

  long total_tokens = 0;
  for (const auto& ex : data) total_tokens += static_cast<long>(ex.tags.size());

  std::mt19937_64 rng(opts.seed);
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch <= opts.epochs; ++epoch) {
    Tape tape;
    EncoderTapeParams enc = register_encoder(tape, model.encoder);
    Tape::Id m_id = tape.input(output_matrix);

    Tape::Id total = -1;
    for (const auto& ex : data) {
      Tape::Id reps = encode_on_tape(tape, model.encoder.config, enc,
                                     ex.tokens, Mode::train, &rng);
      Tape::Id logits = tape.matmul_nt(reps, m_id);  // L x T
      for (std::size_t i = 0; i < ex.tags.size(); ++i) {
        Tape::Id row = tape.transpose(
            tape.gather_rows(logits, {static_cast<int>(i) + 1}));
        Tape::Id loss =
            tape.cross_entropy_with_logits(row, {{ex.tags[i], 1.0}});
        total = total < 0 ? loss : tape.add(total, loss);
      }
    }
    Tape::Id objective =
        tape.scale(total, 1.0 / static_cast<double>(total_tokens));
    epoch_losses.push_back(tape.value(objective)(0, 0));
    if (epoch == opts.epochs) break;  // final entry is the post-training loss
    tape.backward(objective);
    std::vector<Matrix> grads;
    for (Tape::Id id : enc.ordered) grads.push_back(tape.grad(id));
    grads.push_back(tape.grad(m_id));
    adam.step(grads);
  }
  return epoch_losses;
}

std::vector<int> ner_predict_tags(const StudentModel& model,
                                  const Matrix& output_matrix,
                                  const TokenSequence& tokens) {
  const LayerRepresentations reps = encode(model.encoder, tokens);
  const Matrix log_probs = ner_forward(reps.final_layer(), output_matrix);
  std::vector<int> tags;
  for (Eigen::Index r = 1; r < log_probs.rows(); ++r) {
    Eigen::Index best;
    log_probs.row(r).maxCoeff(&best);
    tags.push_back(static_cast<int>(best));
  }
  return tags;
}

std::vector<Entity> bio_decode(const std::vector<std::string>& tags) {
  std::vector<Entity> entities;
  std::string open_type;
  int open_start = -1;
  auto close = [&](int end) {
    if (open_start >= 0)
      entities.push_back({open_type, open_start, end});
    open_start = -1;
    open_type.clear();
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& tag = tags[static_cast<std::size_t>(i)];
    if (tag == "O") {
      close(i - 1);
    } else if (tag.rfind("B-", 0) == 0) {
      close(i - 1);
      open_type = tag.substr(2);
      open_start = i;
    } else if (tag.rfind("I-", 0) == 0) {
      const std::string type = tag.substr(2);
      if (open_start >= 0 && open_type == type) continue;
      // orphan I-x: repaired to B-x
      close(i - 1);
      open_type = type;
      open_start = i;
    } else {
      throw ValidationError("bio_decode: malformed tag " + tag);
    }
  }
  close(static_cast<int>(tags.size()) - 1);
  return entities;
}

std::vector<std::string> bio_encode(const std::vector<Entity>& entities,
                                    int length) {
  std::vector<std::string> tags(static_cast<std::size_t>(length), "O");
  for (const auto& e : entities) {
    if (e.start < 0 || e.end >= length || e.start > e.end)
      throw InvalidArgument("bio_encode: entity out of range");
    tags[static_cast<std::size_t>(e.start)] = "B-" + e.type;
    for (int i = e.start + 1; i <= e.end; ++i)
      tags[static_cast<std::size_t>(i)] = "I-" + e.type;
  }
  return tags;
}

PrfScores entity_f1(const std::vector<Entity>& pred,
                    const std::vector<Entity>& gold) {
  long matched = 0;
  for (const auto& p : pred)
    if (std::find(gold.begin(), gold.end(), p) != gold.end()) ++matched;
  PrfScores s;
  s.precision = pred.empty() ? 0.0
                             : static_cast<double>(matched) /
                                   static_cast<double>(pred.size());
  s.recall = gold.empty() ? 0.0
                          : static_cast<double>(matched) /
                                static_cast<double>(gold.size());
  s.f1 = (s.precision + s.recall) == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::vector<SentimentPrompt> load_sentiment_prompts(const std::string& path,
                                                    const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("load_sentiment_prompts: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("sentiment prompts: ") + e.what(), 0);
  }
  std::vector<SentimentPrompt> prompts;
  for (const auto& entry : j) {
    SentimentPrompt p;
    std::vector<std::string> pos, neg;
    for (const auto& t : entry.at("positive")) pos.push_back(t.get<std::string>());
    for (const auto& t : entry.at("negative")) neg.push_back(t.get<std::string>());
    p.positive = tokenize_tokens(pos, vocab);
    p.negative = tokenize_tokens(neg, vocab);
    if (p.positive.ids == p.negative.ids)
      throw ValidationError("sentiment prompts: identical question pair");
    prompts.push_back(std::move(p));
  }
  return prompts;
}

ContentFreeWords load_content_free_words(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_content_free_words: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("content-free words: ") + e.what(), 0);
  }
  ContentFreeWords w;
  w.id = j.at("id").get<std::string>();
  for (const auto& t : j.at("words")) w.words.push_back(t.get<std::string>());
  if (w.words.empty())
    throw InvalidArgument("content-free words: empty list");
  return w;
}

double sentiment_score(const StudentModel& model, const TokenSequence& x,
                       const TokenSequence& q) {
  const QuestionEmbedding qe = question_embed(model, q);
  const LayerRepresentations reps = encode(model.encoder, x);
  const Matrix& final = reps.final_layer();
  const double best_start = (final * qe.f_start).maxCoeff();
  const double best_end = (final * qe.f_end).maxCoeff();
  return best_start + best_end;
}

CalibrationConstants compute_calibration(const StudentModel& model,
                                         const SentimentPrompt& prompt,
                                         const ContentFreeWords& words,
                                         const Vocabulary& vocab) {
  if (words.words.empty())
    throw InvalidArgument("compute_calibration: empty word list");
  CalibrationConstants c;
  c.word_list_id = words.id;
  double sum0 = 0.0, sum1 = 0.0;
  for (const auto& w : words.words) {
    const TokenSequence x = tokenize(w, vocab);
    sum0 += sentiment_score(model, x, prompt.negative);
    sum1 += sentiment_score(model, x, prompt.positive);
  }
  const double n = static_cast<double>(words.words.size());
  c.c0 = sum0 / n;
  c.c1 = sum1 / n;
  return c;
}

std::pair<int, double> predict_sentiment(const StudentModel& model,
                                         const TokenSequence& x,
                                         const SentimentPrompt& prompt,
                                         const CalibrationConstants& calib) {
  const double s0 = sentiment_score(model, x, prompt.negative) - calib.c0;
  const double s1 = sentiment_score(model, x, prompt.positive) - calib.c1;
  const double margin = s1 - s0;
  return {margin > 0.0 ? 1 : 0, margin};
}

std::pair<Span, std::string> extract_rationale(const StudentModel& model,
                                               const Vocabulary& vocab,
                                               const TokenSequence& x,
                                               const TokenSequence& question,
                                               int max_tokens) {
  if (x.length() < 2)
    throw InvalidArgument("extract_rationale: input has no content tokens");
  if (max_tokens < 1)
    throw InvalidArgument("extract_rationale: max_tokens must be >= 1");
  const QuestionEmbedding qe = question_embed(model, question);
  const LayerRepresentations reps = encode(model.encoder, x);
  const Matrix& final = reps.final_layer();
  const Vector start_scores = final * qe.f_start;
  const Vector end_scores = final * qe.f_end;

  Span best{1, 1};
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 1; i < x.length(); ++i) {
    for (int j = i; j < std::min(x.length(), i + max_tokens); ++j) {
      const double score = start_scores[i] + end_scores[j];
      if (score > best_score) {
        best_score = score;
        best = {i, j};
      }
    }
  }
  std::string text;
  for (int i = best.start; i <= best.end; ++i) {
    if (i > best.start) text += ' ';
    text += vocab.token(x.ids[static_cast<std::size_t>(i)]);
  }
  return {best, text};
}

std::vector<SentimentExample> load_sentiment_jsonl(const std::string& path,
                                                   const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("load_sentiment_jsonl: cannot open " + path);
  std::vector<SentimentExample> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("sentiment data: ") + e.what(), line_no);
    }
    SentimentExample ex;
    std::vector<std::string> tokens;
    for (const auto& t : j.at("tokens")) tokens.push_back(t.get<std::string>());
    ex.tokens = tokenize_tokens(tokens, vocab);
    ex.label = j.at("label").get<int>();
    if (ex.label != 0 && ex.label != 1)
      throw ValidationError("sentiment data: label must be 0 or 1");
    out.push_back(std::move(ex));
  }
  return out;
}

void save_sentiment_jsonl(const std::string& path,
                          const std::vector<SentimentExample>& examples,
                          const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_sentiment_jsonl: cannot open " + path);
  for (const auto& ex : examples) {
    json j;
    json tokens = json::array();
    for (std::size_t i = 1; i < ex.tokens.ids.size(); ++i)
      tokens.push_back(vocab.token(ex.tokens.ids[i]));
    j["tokens"] = std::move(tokens);
    j["label"] = ex.label;
    out << j.dump() << "\n";
  }
}

}  // namespace qap
