#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "qap/autodiff.hpp"

namespace qap {

struct GradCheckCase {
  std::string name;
  GradientReport report;
  double bound = 1e-4;
  bool passed = false;
};

// Gradient checks for every training objective (teacher supervision,
// distillation soft and hard, NER, paraphrase fine-tuning) on tiny
// deterministic fixtures, each at three seeds.
std::vector<GradCheckCase> run_all_grad_checks(std::uint64_t base_seed = 0);

// Prints one line per case; returns true when every case is within bound.
bool run_gradient_check_harness(std::ostream& os, std::uint64_t base_seed = 0);

}  // namespace qap
