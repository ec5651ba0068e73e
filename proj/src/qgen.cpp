#include "qap/qgen.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>

namespace qap {

namespace {

const std::set<std::string> kStopwords = {
    "the", "a",  "an", "of",  "in",   "on",  "at", "to",  "and", "or",
    "is",  "was", "be", "by", "with", "for", "as", "from", "that", "it"};

bool is_capitalized(const std::string& tok) {
  return !tok.empty() && std::isupper(static_cast<unsigned char>(tok[0]));
}

bool is_numeric(const std::string& tok) {
  if (tok.empty()) return false;
  for (char c : tok)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

bool is_punct(const std::string& tok) {
  return tok == "." || tok == "!" || tok == "?" || tok == ",";
}

enum class CandidateKind { entity, number, noun };

struct Candidate {
  Span span;  // positions in the [BOS]-indexed sequence
  CandidateKind kind;
  int sentence;  // index into split_sentences()
};

// Count occurrences of the candidate's lowercase token string in the
// passage; the span is only kept when the match is unique.
bool occurs_uniquely(const std::vector<std::string>& raw, const Span& span) {
  const int len = span.end - span.start + 1;
  std::vector<std::string> needle;
  for (int i = 0; i < len; ++i)
    needle.push_back(lowercase(raw[static_cast<std::size_t>(span.start - 1 + i)]));
  int count = 0;
  for (std::size_t at = 0; at + needle.size() <= raw.size(); ++at) {
    bool match = true;
    for (std::size_t i = 0; i < needle.size(); ++i)
      if (lowercase(raw[at + i]) != needle[i]) {
        match = false;
        break;
      }
    if (match) ++count;
  }
  return count == 1;
}

std::string span_text(const std::vector<std::string>& raw, const Span& span) {
  std::string out;
  for (int i = span.start; i <= span.end; ++i) {
    if (i > span.start) out += ' ';
    out += lowercase(raw[static_cast<std::size_t>(i - 1)]);
  }
  return out;
}

// Candidate answers in deterministic order: capitalized runs, numeric
// tokens, then content positions sampled through the nucleus filter.
std::vector<Candidate> collect_candidates(const Passage& passage,
                                          const GeneratorConfig& config,
                                          std::mt19937_64& rng) {
  const auto& raw = passage.raw_tokens;
  const auto sentences = split_sentences(raw);
  std::vector<Candidate> candidates;
  std::set<std::pair<int, int>> seen;

  auto sentence_of = [&](int raw_idx) {
    for (std::size_t s = 0; s < sentences.size(); ++s)
      if (raw_idx >= sentences[s].first && raw_idx <= sentences[s].second)
        return static_cast<int>(s);
    return -1;
  };

  auto push = [&](Span span, CandidateKind kind) {
    if (!seen.insert({span.start, span.end}).second) return;
    candidates.push_back({span, kind, sentence_of(span.start - 1)});
  };

  for (const auto& [first, last] : sentences) {
    int i = first;
    while (i <= last) {
      if (is_capitalized(raw[static_cast<std::size_t>(i)])) {
        int j = i;
        while (j + 1 <= last &&
               is_capitalized(raw[static_cast<std::size_t>(j + 1)]))
          ++j;
        push({i + 1, j + 1}, CandidateKind::entity);
        i = j + 1;
      } else {
        ++i;
      }
    }
  }
  for (const auto& [first, last] : sentences)
    for (int i = first; i <= last; ++i)
      if (is_numeric(raw[static_cast<std::size_t>(i)]))
        push({i + 1, i + 1}, CandidateKind::number);

  // Fill the remaining quota from content-word positions, sampled from a
  // nucleus-filtered uniform distribution over eligible positions.
  const int quota = config.questions_per_passage;
  if (static_cast<int>(candidates.size()) < quota) {
    std::vector<int> eligible;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const std::string low = lowercase(raw[i]);
      if (is_capitalized(raw[i]) || is_numeric(raw[i]) || is_punct(raw[i]))
        continue;
      if (kStopwords.count(low)) continue;
      if (seen.count({static_cast<int>(i) + 1, static_cast<int>(i) + 1}))
        continue;
      eligible.push_back(static_cast<int>(i));
    }
    while (static_cast<int>(candidates.size()) < quota && !eligible.empty()) {
      Vector weights = Vector::Ones(static_cast<Eigen::Index>(eligible.size()));
      ProbabilityVector filtered = nucleus_filter(
          ProbabilityVector(weights / weights.sum()), config.nucleus_p);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      double u = unif(rng);
      std::size_t pick = 0;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < filtered.size(); ++i) {
        acc += filtered[i];
        if (u <= acc) {
          pick = static_cast<std::size_t>(i);
          break;
        }
      }
      const int raw_idx = eligible[pick];
      push({raw_idx + 1, raw_idx + 1}, CandidateKind::noun);
      eligible.erase(eligible.begin() + static_cast<long>(pick));
    }
  }
  return candidates;
}

std::vector<Candidate> apply_answer_dedupe(
    const std::vector<Candidate>& candidates,
    const std::vector<std::string>& raw, bool unique_answers) {
  if (!unique_answers) return candidates;
  std::vector<Candidate> out;
  std::set<std::string> seen_text;
  for (const auto& c : candidates)
    if (seen_text.insert(span_text(raw, c.span)).second) out.push_back(c);
  return out;
}

const char* wh_word(CandidateKind kind) {
  switch (kind) {
    case CandidateKind::entity:
      return "who";
    case CandidateKind::number:
      return "when";
    case CandidateKind::noun:
      return "what";
  }
  return "what";
}

}  // namespace

void GeneratorConfig::validate() const {
  if (questions_per_passage < 1)
    throw ConfigError("GeneratorConfig: questions_per_passage must be >= 1");
  if (!(nucleus_p > 0.0) || nucleus_p > 1.0)
    throw ConfigError("GeneratorConfig: nucleus_p must be in (0,1]");
  if (cloze_drop_prob < 0.0 || cloze_drop_prob > 1.0)
    throw ConfigError("GeneratorConfig: cloze_drop_prob must be in [0,1]");
}

ProbabilityVector nucleus_filter(const ProbabilityVector& probs, double p) {
  if (!(p > 0.0) || p > 1.0)
    throw InvalidArgument("nucleus_filter: p must be in (0,1]");
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  Vector kept = Vector::Zero(probs.size());
  double mass = 0.0;
  for (int idx : order) {
    kept[idx] = probs[idx];
    mass += probs[idx];
    if (mass >= p) break;
  }
  return ProbabilityVector(kept / kept.sum());
}

std::vector<std::pair<int, int>> split_sentences(
    const std::vector<std::string>& raw_tokens) {
  std::vector<std::pair<int, int>> sentences;
  int start = 0;
  for (int i = 0; i < static_cast<int>(raw_tokens.size()); ++i) {
    const std::string& t = raw_tokens[static_cast<std::size_t>(i)];
    if (t == "." || t == "!" || t == "?") {
      sentences.emplace_back(start, i);
      start = i + 1;
    }
  }
  if (start < static_cast<int>(raw_tokens.size()))
    sentences.emplace_back(start, static_cast<int>(raw_tokens.size()) - 1);
  return sentences;
}

std::vector<GeneratedQA> generate_rule_based(const Passage& passage,
                                             const Vocabulary& vocab,
                                             const GeneratorConfig& config) {
  config.validate();
  if (static_cast<int>(passage.raw_tokens.size()) < 3) return {};
  std::mt19937_64 rng(derive_seed(config.seed, passage.id));
  const auto& raw = passage.raw_tokens;
  const auto sentences = split_sentences(raw);

  auto candidates = apply_answer_dedupe(
      collect_candidates(passage, config, rng), raw, config.unique_answers);

  std::vector<GeneratedQA> out;
  for (const auto& cand : candidates) {
    if (static_cast<int>(out.size()) >= config.questions_per_passage) break;
    if (cand.sentence < 0) continue;
    const auto [first, last] = sentences[static_cast<std::size_t>(cand.sentence)];

    // Question = wh-word + the span's sentence minus the span and trailing
    // punctuation, + '?'. Requires at least one surviving content token.
    std::vector<std::string> body;
    for (int i = first; i <= last; ++i) {
      const int pos = i + 1;  // [BOS]-indexed
      if (pos >= cand.span.start && pos <= cand.span.end) continue;
      if (i == last && is_punct(raw[static_cast<std::size_t>(i)])) continue;
      body.push_back(lowercase(raw[static_cast<std::size_t>(i)]));
    }
    if (body.empty()) continue;

    GeneratedQA qa;
    qa.passage_id = passage.id;
    qa.qid = passage.id + "-q" + std::to_string(out.size());
    std::vector<std::string> qtokens;
    qtokens.push_back(wh_word(cand.kind));
    qtokens.insert(qtokens.end(), body.begin(), body.end());
    qtokens.push_back("?");
    qa.question = tokenize_tokens(qtokens, vocab);
    qa.answer_text = span_text(raw, cand.span);
    if (occurs_uniquely(raw, cand.span)) qa.answer_span = cand.span;
    out.push_back(std::move(qa));
  }
  return out;
}

std::vector<GeneratedQA> generate_cloze_noise(const Passage& passage,
                                              const Vocabulary& vocab,
                                              const GeneratorConfig& config) {
  config.validate();
  if (passage.raw_tokens.empty()) return {};
  std::mt19937_64 rng(derive_seed(config.seed, passage.id));
  const auto& raw = passage.raw_tokens;
  const auto sentences = split_sentences(raw);

  auto candidates = apply_answer_dedupe(
      collect_candidates(passage, config, rng), raw, config.unique_answers);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<GeneratedQA> out;
  for (const auto& cand : candidates) {
    if (static_cast<int>(out.size()) >= config.questions_per_passage) break;
    if (cand.sentence < 0) continue;
    const auto [first, last] = sentences[static_cast<std::size_t>(cand.sentence)];

    std::vector<std::string> qtokens;
    bool blank_emitted = false;
    for (int i = first; i <= last; ++i) {
      const int pos = i + 1;
      if (pos >= cand.span.start && pos <= cand.span.end) {
        if (!blank_emitted) {
          qtokens.push_back("[BLANK]");
          blank_emitted = true;
        }
        continue;
      }
      if (unif(rng) < config.cloze_drop_prob) continue;
      qtokens.push_back(lowercase(raw[static_cast<std::size_t>(i)]));
    }

    GeneratedQA qa;
    qa.passage_id = passage.id;
    qa.qid = passage.id + "-z" + std::to_string(out.size());
    qa.question = tokenize_tokens(qtokens, vocab);
    qa.answer_text = span_text(raw, cand.span);
    if (occurs_uniquely(raw, cand.span)) qa.answer_span = cand.span;
    out.push_back(std::move(qa));
  }
  return out;
}

}  // namespace qap
