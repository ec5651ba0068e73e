#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qap/common.hpp"

namespace qap {

// Reserved token ids. [BOS] doubles as the CLS/unanswerable slot.
enum ReservedToken : int {
  kBos = 0,
  kSep = 1,
  kUnk = 2,
  kBlank = 3,
  kPad = 4,
  kNumReserved = 5,
};

// Whitespace vocabulary over lowercased surface forms. Reserved ids are
// fixed; everything else is bijective.
class Vocabulary {
 public:
  Vocabulary();

  // Adds a (lowercased) token if absent; returns its id.
  int add(const std::string& token);
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  // Non-reserved tokens in id order (for serialization).
  std::vector<std::string> entries() const;
  static Vocabulary from_entries(const std::vector<std::string>& entries);

 private:
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Token ids with ids[0] == [BOS] always.
struct TokenSequence {
  std::vector<int> ids;

  int length() const { return static_cast<int>(ids.size()); }
  void validate(int max_len = 0) const;
};

// Inclusive token span; never covers the [BOS] position.
struct Span {
  int start = 0;
  int end = 0;

  bool operator==(const Span&) const = default;
  void validate(int sequence_length) const;
};

struct QARecord {
  std::string passage_id;
  std::string qid;
  TokenSequence question;
  std::optional<Span> answer_span;
  std::string answer_text;               // primary gold answer
  std::vector<std::string> answer_texts; // all gold answers for scoring
};

// A passage keeps the original-case surface tokens (capitalization is a
// signal for question synthesis) alongside the id sequence.
struct Passage {
  std::string id;
  std::vector<std::string> raw_tokens;  // no [BOS] entry
  TokenSequence tokens;                 // [BOS] + lowercased ids
};

struct DatasetEntry {
  Passage passage;
  std::vector<QARecord> qas;
};

std::string lowercase(std::string s);

// Whitespace-split, lowercase, map through vocab with [UNK] fallback,
// prepend [BOS].
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);
TokenSequence tokenize_tokens(const std::vector<std::string>& tokens,
                              const Vocabulary& vocab);

// Join of id_to_token over ids[1..], space separated.
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

// Greedy chunking: extend the current chunk while the running total stays
// within max_len, else start a new chunk. Returns sentence-index chunks.
std::vector<std::vector<int>> chunk_passages(
    const std::vector<int>& sentence_lengths, int max_len = 456);

struct DatasetLimits {
  int max_passage_tokens = 456;
  int max_question_tokens = 50;
};

// JSONL loader for the dataset format described in the README. Validates
// spans against the tokenized context and enforces the question budget.
std::vector<DatasetEntry> load_dataset(const std::string& path,
                                       const Vocabulary& vocab,
                                       const DatasetLimits& limits = {});

void save_dataset(const std::string& path,
                  const std::vector<DatasetEntry>& entries,
                  const Vocabulary& vocab);

void save_vocabulary(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace qap
