#pragma once

#include <string>
#include <vector>

namespace qap {

// Lowercase + whitespace tokenization; the shared answer normalization.
std::vector<std::string> normalize_answer(const std::string& text);

// 1 when the normalized prediction equals any normalized gold answer.
int exact_match(const std::string& pred, const std::vector<std::string>& golds);

// Max over golds of the token-multiset F1 between prediction and gold.
double token_f1(const std::string& pred, const std::vector<std::string>& golds);

}  // namespace qap
