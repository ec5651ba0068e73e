#pragma once

#include <Eigen/Dense>
#include <string>

#include "qap/common.hpp"

namespace qap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Floor applied to log-probabilities where a nonzero target multiplies them,
// so sparse targets never evaluate log(0) while gradients stay usable.
constexpr double kLogFloor = 1e-12;

// Throws if any entry is NaN or infinite. Modules call this at their public
// boundaries to uphold the finiteness invariant of dense results.
void ensure_finite(const Eigen::Ref<const Matrix>& m, const std::string& what);

// A normalized probability distribution over indices 0..size-1.
class ProbabilityVector {
 public:
  explicit ProbabilityVector(Vector probs);

  Eigen::Index size() const { return probs_.size(); }
  double operator[](Eigen::Index i) const { return probs_[i]; }
  const Vector& probs() const { return probs_; }

 private:
  Vector probs_;
};

// Stable softmax (max-subtraction). Empty input is invalid.
ProbabilityVector softmax(const Eigen::Ref<const Vector>& logits);

// log softmax(logits), computed as x - logsumexp(x).
Vector log_softmax(const Eigen::Ref<const Vector>& logits);

// -sum_i target_i * log_probs_i with the convention 0 * log(.) = 0.
// log_probs must be the log of a normalized distribution of equal length.
double cross_entropy_to_target(const ProbabilityVector& target,
                               const Eigen::Ref<const Vector>& log_probs);

// -sum_i p_i log p_i over the nonzero entries.
double entropy(const ProbabilityVector& p);

// u.v / (|u||v|). Zero-norm inputs are degenerate.
double cosine_similarity(const Eigen::Ref<const Vector>& u,
                         const Eigen::Ref<const Vector>& v);

}  // namespace qap
