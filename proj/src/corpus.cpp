#include "qap/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace qap {

using nlohmann::json;

namespace {

const std::vector<std::string> kReservedTokens = {"[BOS]", "[SEP]", "[UNK]",
                                                  "[BLANK]", "[PAD]"};

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return s;
}

Vocabulary::Vocabulary() {
  for (const auto& t : kReservedTokens) {
    token_to_id_[lowercase(t)] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(t);
  }
}

int Vocabulary::add(const std::string& token) {
  std::string t = lowercase(token);
  auto it = token_to_id_.find(t);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  token_to_id_[t] = id;
  id_to_token_.push_back(t);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(lowercase(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw InvalidArgument("Vocabulary: bad id");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(lowercase(token)) > 0;
}

std::vector<std::string> Vocabulary::entries() const {
  return {id_to_token_.begin() + kNumReserved, id_to_token_.end()};
}

Vocabulary Vocabulary::from_entries(const std::vector<std::string>& entries) {
  Vocabulary v;
  for (const auto& e : entries) v.add(e);
  return v;
}

void TokenSequence::validate(int max_len) const {
  if (ids.empty() || ids[0] != kBos)
    throw ValidationError("TokenSequence: must start with [BOS]");
  if (max_len > 0 && length() > max_len)
    throw ValidationError("TokenSequence: exceeds maximum length");
}

void Span::validate(int sequence_length) const {
  if (!(0 < start && start <= end && end < sequence_length))
    throw ValidationError("Span: out of range [" + std::to_string(start) +
                          "," + std::to_string(end) + "] for length " +
                          std::to_string(sequence_length));
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  return tokenize_tokens(split_whitespace(text), vocab);
}

TokenSequence tokenize_tokens(const std::vector<std::string>& tokens,
                              const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.reserve(tokens.size() + 1);
  seq.ids.push_back(kBos);
  for (const auto& t : tokens) seq.ids.push_back(vocab.id(t));
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 1; i < seq.ids.size(); ++i) {
    if (i > 1) out += ' ';
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

std::vector<std::vector<int>> chunk_passages(
    const std::vector<int>& sentence_lengths, int max_len) {
  if (max_len < 1) throw InvalidArgument("chunk_passages: max_len must be >= 1");
  std::vector<std::vector<int>> chunks;
  std::vector<int> current;
  int total = 0;
  for (std::size_t i = 0; i < sentence_lengths.size(); ++i) {
    const int len = sentence_lengths[i];
    if (len > max_len)
      throw InvalidArgument("chunk_passages: sentence " + std::to_string(i) +
                            " exceeds max_len");
    if (len < 0)
      throw InvalidArgument("chunk_passages: negative sentence length");
    if (!current.empty() && total + len > max_len) {
      chunks.push_back(std::move(current));
      current.clear();
      total = 0;
    }
    current.push_back(static_cast<int>(i));
    total += len;
  }
  if (!current.empty()) chunks.push_back(std::move(current));
  return chunks;
}

namespace {

QARecord parse_qa(const json& jq, const Passage& passage,
                  const Vocabulary& vocab, const DatasetLimits& limits,
                  long line_no) {
  QARecord rec;
  rec.passage_id = passage.id;
  if (!jq.contains("qid") || !jq["qid"].is_string())
    throw ParseError("qa missing string 'qid'", line_no);
  rec.qid = jq["qid"].get<std::string>();
  if (!jq.contains("question") || !jq["question"].is_array())
    throw ParseError("qa " + rec.qid + " missing token array 'question'",
                     line_no);
  std::vector<std::string> qtokens;
  for (const auto& t : jq["question"]) {
    if (!t.is_string())
      throw ParseError("qa " + rec.qid + " has a non-string question token",
                       line_no);
    qtokens.push_back(t.get<std::string>());
  }
  if (static_cast<int>(qtokens.size()) > limits.max_question_tokens)
    throw ValidationError("question " + rec.qid + " exceeds " +
                          std::to_string(limits.max_question_tokens) +
                          " tokens");
  rec.question = tokenize_tokens(qtokens, vocab);

  if (jq.contains("answers")) {
    if (!jq["answers"].is_array())
      throw ParseError("qa " + rec.qid + " 'answers' must be an array", line_no);
    for (const auto& a : jq["answers"]) {
      if (!a.is_string())
        throw ParseError("qa " + rec.qid + " has a non-string answer", line_no);
      rec.answer_texts.push_back(a.get<std::string>());
    }
  }
  if (!rec.answer_texts.empty()) rec.answer_text = rec.answer_texts[0];

  if (jq.contains("span") && !jq["span"].is_null()) {
    if (!jq["span"].is_array() || jq["span"].size() != 2 ||
        !jq["span"][0].is_number_integer() || !jq["span"][1].is_number_integer())
      throw ParseError("qa " + rec.qid + " 'span' must be [start, end]",
                       line_no);
    Span span{jq["span"][0].get<int>(), jq["span"][1].get<int>()};
    try {
      span.validate(passage.tokens.length());
    } catch (const ValidationError& e) {
      throw ValidationError("qa " + rec.qid + ": " + e.what());
    }
    if (rec.answer_texts.empty())
      throw ValidationError("qa " + rec.qid + ": span without answer text");
    const TokenSequence answer = tokenize(rec.answer_text, vocab);
    const int span_len = span.end - span.start + 1;
    if (answer.length() - 1 != span_len)
      throw ValidationError("qa " + rec.qid +
                            ": span length does not match answer text");
    for (int i = 0; i < span_len; ++i) {
      if (passage.tokens.ids[static_cast<std::size_t>(span.start + i)] !=
          answer.ids[static_cast<std::size_t>(i + 1)])
        throw ValidationError("qa " + rec.qid +
                              ": span tokens do not match answer text");
    }
    rec.answer_span = span;
  }
  return rec;
}

}  // namespace

std::vector<DatasetEntry> load_dataset(const std::string& path,
                                       const Vocabulary& vocab,
                                       const DatasetLimits& limits) {
  std::ifstream in(path);
  if (!in) throw IoError("load_dataset: cannot open " + path);
  std::vector<DatasetEntry> entries;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
      throw ParseError("record missing string 'id'", line_no);
    if (!j.contains("context") || !j["context"].is_array())
      throw ParseError("record missing token array 'context'", line_no);

    DatasetEntry entry;
    entry.passage.id = j["id"].get<std::string>();
    for (const auto& t : j["context"]) {
      if (!t.is_string())
        throw ParseError("record has a non-string context token", line_no);
      entry.passage.raw_tokens.push_back(t.get<std::string>());
    }
    entry.passage.tokens = tokenize_tokens(entry.passage.raw_tokens, vocab);
    if (entry.passage.tokens.length() - 1 > limits.max_passage_tokens)
      throw ValidationError("passage " + entry.passage.id + " exceeds " +
                            std::to_string(limits.max_passage_tokens) +
                            " tokens");
    if (j.contains("qas")) {
      if (!j["qas"].is_array())
        throw ParseError("record 'qas' must be an array", line_no);
      for (const auto& jq : j["qas"])
        entry.qas.push_back(parse_qa(jq, entry.passage, vocab, limits, line_no));
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

void save_dataset(const std::string& path,
                  const std::vector<DatasetEntry>& entries,
                  const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_dataset: cannot open " + path);
  for (const auto& entry : entries) {
    json j;
    j["id"] = entry.passage.id;
    j["context"] = entry.passage.raw_tokens;
    json qas = json::array();
    for (const auto& qa : entry.qas) {
      json jq;
      jq["qid"] = qa.qid;
      json qtokens = json::array();
      for (std::size_t i = 1; i < qa.question.ids.size(); ++i)
        qtokens.push_back(vocab.token(qa.question.ids[i]));
      jq["question"] = std::move(qtokens);
      jq["answers"] = qa.answer_texts;
      if (qa.answer_span)
        jq["span"] = {qa.answer_span->start, qa.answer_span->end};
      else
        jq["span"] = nullptr;
      qas.push_back(std::move(jq));
    }
    j["qas"] = std::move(qas);
    out << j.dump() << "\n";
  }
}

void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_vocabulary: cannot open " + path);
  json j;
  j["tokens"] = vocab.entries();
  out << j.dump(2) << "\n";
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_vocabulary: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("vocabulary: ") + e.what(), 0);
  }
  if (!j.contains("tokens") || !j["tokens"].is_array())
    throw ValidationError("vocabulary: missing 'tokens'");
  std::vector<std::string> entries;
  for (const auto& t : j["tokens"]) entries.push_back(t.get<std::string>());
  return Vocabulary::from_entries(entries);
}

}  // namespace qap
