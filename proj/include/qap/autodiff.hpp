#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qap/numerics.hpp"

namespace qap {

// Collects statistics about the normalized activations (pre scale/shift)
// seen by layer_norm nodes. Hooked in by tests that assert the
// normalization invariant.
struct LayerNormProbe {
  long rows = 0;
  double max_abs_mean = 0.0;
  double max_var_error = 0.0;
};

// Reverse-mode tape over dense matrices. Nodes are created in topological
// order by construction; backward() walks them in reverse. One tape per
// forward pass; tapes are cheap to build and drop.
class Tape {
 public:
  using Id = std::int32_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding an externally supplied value. Gradients accumulate into
  // grad(id) during backward().
  Id input(Matrix value);

  const Matrix& value(Id id) const { return nodes_[id].value; }
  const Matrix& grad(Id id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id cmul(Id a, Id b);  // elementwise product
  Id cdiv(Id a, Id b);  // elementwise quotient
  Id scale(Id a, double s);
  Id matmul(Id a, Id b);     // A * B
  Id matmul_nt(Id a, Id b);  // A * B^T
  Id add_row(Id a, Id row);  // broadcast a 1 x n row over every row of a
  Id gelu(Id a);
  Id layer_norm(Id x, Id gain, Id bias, double eps,
                LayerNormProbe* probe = nullptr);
  // Inverted dropout with a mask drawn once at forward time.
  Id dropout(Id x, double rate, std::mt19937_64& rng);
  Id gather_rows(Id table, std::vector<int> rows);
  Id slice_cols(Id x, int first_col, int width);
  Id concat_cols(const std::vector<Id>& parts);
  Id softmax_rows(Id x);
  Id rowwise_max(Id x);      // L x 1; subgradient flows to the argmax entry
  Id normalize_rows(Id x);   // each row scaled to unit L2 norm
  Id sum_all(Id x);          // 1 x 1
  Id mean_all(Id x);         // 1 x 1
  Id transpose(Id x);

  // -sum_i t_i * max(log softmax(logits)_i, log(kLogFloor)) for sparse
  // targets t given as (index, weight) pairs. logits is a column vector.
  Id cross_entropy_with_logits(Id logits,
                               std::vector<std::pair<int, double>> target);

  // log(1 + exp(-t * s)) for a scalar score s and label in {0,1}
  // (t = 2*label - 1), computed stably.
  Id logistic_loss(Id score, int label);

  // Seeds d(loss)/d(loss) = 1 and propagates to every node. loss must be
  // 1 x 1 and finite.
  void backward(Id loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;  // captures `this` and ids, never references
  };

  Id emplace(Matrix value, std::function<void()> back);
  Matrix& mutable_grad(Id id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

// One named parameter block of a model, referenced in place.
struct ParamRef {
  std::string name;
  Matrix* value;
};

struct GradientReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

// Compares the analytic gradient produced by `loss_fn` against central
// finite differences for every entry of every parameter. `loss_fn(nullptr)`
// must return the loss at the current parameter values; `loss_fn(&grads)`
// must additionally fill one gradient matrix per ParamRef, same order.
GradientReport grad_check(
    const std::vector<ParamRef>& params,
    const std::function<double(std::vector<Matrix>*)>& loss_fn,
    double epsilon);

// Adam over a fixed parameter list. `lr_multipliers`, when non-empty, holds
// one factor per parameter (used e.g. to boost the output layer).
class AdamOptimizer {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamOptimizer(std::vector<Matrix*> params, Options opts,
                std::vector<double> lr_multipliers = {});

  void step(const std::vector<Matrix>& grads);

 private:
  std::vector<Matrix*> params_;
  Options opts_;
  std::vector<double> lr_multipliers_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace qap
