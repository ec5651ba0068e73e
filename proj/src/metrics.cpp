#include "qap/metrics.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "qap/common.hpp"
#include "qap/corpus.hpp"

namespace qap {

std::vector<std::string> normalize_answer(const std::string& text) {
  std::istringstream is(lowercase(text));
  std::vector<std::string> tokens;
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

int exact_match(const std::string& pred,
                const std::vector<std::string>& golds) {
  if (golds.empty()) throw InvalidArgument("exact_match: no gold answers");
  const auto p = normalize_answer(pred);
  for (const auto& g : golds)
    if (normalize_answer(g) == p) return 1;
  return 0;
}

double token_f1(const std::string& pred,
                const std::vector<std::string>& golds) {
  if (golds.empty()) throw InvalidArgument("token_f1: no gold answers");
  const auto p = normalize_answer(pred);
  double best = 0.0;
  for (const auto& gold : golds) {
    const auto g = normalize_answer(gold);
    if (p.empty() || g.empty()) {
      best = std::max(best, p.empty() && g.empty() ? 1.0 : 0.0);
      continue;
    }
    std::map<std::string, int> counts;
    for (const auto& t : g) counts[t]++;
    int overlap = 0;
    for (const auto& t : p) {
      auto it = counts.find(t);
      if (it != counts.end() && it->second > 0) {
        ++overlap;
        --it->second;
      }
    }
    if (overlap == 0) continue;
    const double precision =
        static_cast<double>(overlap) / static_cast<double>(p.size());
    const double recall =
        static_cast<double>(overlap) / static_cast<double>(g.size());
    best = std::max(best, 2.0 * precision * recall / (precision + recall));
  }
  return best;
}

}  // namespace qap
