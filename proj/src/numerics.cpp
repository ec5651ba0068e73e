#include "qap/numerics.hpp"

#include <cmath>
#include <sstream>

namespace qap {

std::string to_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  for (int shift = 60; shift >= 0; shift -= 4)
    os << ((v >> shift) & 0xf);
  return os.str();
}

void ensure_finite(const Eigen::Ref<const Matrix>& m, const std::string& what) {
  if (!m.allFinite())
    throw EvaluationError(what + ": non-finite values");
}

ProbabilityVector::ProbabilityVector(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() == 0)
    throw InvalidArgument("ProbabilityVector: empty");
  if (!probs_.allFinite())
    throw InvalidArgument("ProbabilityVector: non-finite entries");
  if (probs_.minCoeff() < -1e-12 || probs_.maxCoeff() > 1.0 + 1e-9)
    throw InvalidArgument("ProbabilityVector: entries outside [0,1]");
  if (std::abs(probs_.sum() - 1.0) > 1e-9)
    throw InvalidArgument("ProbabilityVector: does not sum to 1");
}

ProbabilityVector softmax(const Eigen::Ref<const Vector>& logits) {
  if (logits.size() == 0)
    throw InvalidArgument("softmax: empty input");
  if (!logits.allFinite())
    throw InvalidArgument("softmax: non-finite input");
  Vector shifted = logits.array() - logits.maxCoeff();
  Vector e = shifted.array().exp();
  return ProbabilityVector(e / e.sum());
}

Vector log_softmax(const Eigen::Ref<const Vector>& logits) {
  if (logits.size() == 0)
    throw InvalidArgument("log_softmax: empty input");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

double cross_entropy_to_target(const ProbabilityVector& target,
                               const Eigen::Ref<const Vector>& log_probs) {
  if (target.size() != log_probs.size())
    throw InvalidArgument("cross_entropy_to_target: length mismatch");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target[i] > 0.0)
      loss -= target[i] * std::max(log_probs[i], std::log(kLogFloor));
  }
  return loss;
}

double entropy(const ProbabilityVector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

double cosine_similarity(const Eigen::Ref<const Vector>& u,
                         const Eigen::Ref<const Vector>& v) {
  if (u.size() != v.size())
    throw InvalidArgument("cosine_similarity: length mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    throw DegenerateInput("cosine_similarity: zero-norm input");
  return u.dot(v) / (nu * nv);
}

}  // namespace qap
