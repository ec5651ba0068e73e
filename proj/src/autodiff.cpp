#include "qap/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace qap {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

inline double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

}  // namespace

Tape::Id Tape::emplace(Matrix value, std::function<void()> back) {
  Node node;
  node.value = std::move(value);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::input(Matrix value) { return emplace(std::move(value), {}); }

Tape::Id Tape::add(Id a, Id b) {
  Id out = emplace(value(a) + value(b), {});
  nodes_[out].back = [this, a, b, out] {
    mutable_grad(a) += grad(out);
    mutable_grad(b) += grad(out);
  };
  return out;
}

Tape::Id Tape::sub(Id a, Id b) {
  Id out = emplace(value(a) - value(b), {});
  nodes_[out].back = [this, a, b, out] {
    mutable_grad(a) += grad(out);
    mutable_grad(b) -= grad(out);
  };
  return out;
}

Tape::Id Tape::cmul(Id a, Id b) {
  Id out = emplace(value(a).cwiseProduct(value(b)), {});
  nodes_[out].back = [this, a, b, out] {
    mutable_grad(a) += grad(out).cwiseProduct(value(b));
    mutable_grad(b) += grad(out).cwiseProduct(value(a));
  };
  return out;
}

Tape::Id Tape::cdiv(Id a, Id b) {
  Id out = emplace(value(a).cwiseQuotient(value(b)), {});
  nodes_[out].back = [this, a, b, out] {
    mutable_grad(a) += grad(out).cwiseQuotient(value(b));
    mutable_grad(b) -= grad(out)
                           .cwiseProduct(value(out))
                           .cwiseQuotient(value(b));
  };
  return out;
}

Tape::Id Tape::scale(Id a, double s) {
  Id out = emplace(value(a) * s, {});
  nodes_[out].back = [this, a, out, s] { mutable_grad(a) += grad(out) * s; };
  return out;
}

Tape::Id Tape::matmul(Id a, Id b) {
  Id out = emplace(value(a) * value(b), {});
  nodes_[out].back = [this, a, b, out] {
    mutable_grad(a).noalias() += grad(out) * value(b).transpose();
    mutable_grad(b).noalias() += value(a).transpose() * grad(out);
  };
  return out;
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
  Id out = emplace(value(a) * value(b).transpose(), {});
  nodes_[out].back = [this, a, b, out] {
    mutable_grad(a).noalias() += grad(out) * value(b);
    mutable_grad(b).noalias() += grad(out).transpose() * value(a);
  };
  return out;
}

Tape::Id Tape::add_row(Id a, Id row) {
  Matrix v = value(a);
  v.rowwise() += value(row).row(0);
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, a, row, out] {
    mutable_grad(a) += grad(out);
    mutable_grad(row) += grad(out).colwise().sum();
  };
  return out;
}

Tape::Id Tape::gelu(Id a) {
  Id out = emplace(value(a).unaryExpr([](double x) { return gelu_scalar(x); }),
                   {});
  nodes_[out].back = [this, a, out] {
    mutable_grad(a) += grad(out).cwiseProduct(
        value(a).unaryExpr([](double x) { return gelu_grad_scalar(x); }));
  };
  return out;
}

Tape::Id Tape::layer_norm(Id x, Id gain, Id bias, double eps,
                          LayerNormProbe* probe) {
  const Matrix& xv = value(x);
  const auto rows = xv.rows();
  const auto cols = xv.cols();
  Matrix normalized(rows, cols);
  Vector inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    normalized.row(r) = (xv.row(r).array() - mean) * is;
    if (probe) {
      probe->rows++;
      probe->max_abs_mean =
          std::max(probe->max_abs_mean, std::abs(normalized.row(r).mean()));
      const double nvar = (normalized.row(r).array() -
                           normalized.row(r).mean())
                              .square()
                              .mean();
      probe->max_var_error =
          std::max(probe->max_var_error, std::abs(nvar - 1.0));
    }
  }
  Matrix out_v = normalized;
  out_v.array().rowwise() *= value(gain).row(0).array();
  out_v.rowwise() += value(bias).row(0);

  Id out = emplace(std::move(out_v), {});
  // Keep the normalized activations and 1/std for the backward pass.
  nodes_[out].back = [this, x, gain, bias, out,
                      normalized = std::move(normalized),
                      inv_std = std::move(inv_std)] {
    const Matrix& g = grad(out);
    Matrix g_hat = g;
    g_hat.array().rowwise() *= value(gain).row(0).array();
    Matrix& gx = mutable_grad(x);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double mean_g = g_hat.row(r).mean();
      const double mean_gn =
          (g_hat.row(r).array() * normalized.row(r).array()).mean();
      gx.row(r).array() +=
          inv_std[r] * (g_hat.row(r).array() - mean_g -
                        normalized.row(r).array() * mean_gn);
    }
    mutable_grad(gain) +=
        (g.array() * normalized.array()).colwise().sum().matrix();
    mutable_grad(bias) += g.colwise().sum();
  };
  return out;
}

Tape::Id Tape::dropout(Id x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw InvalidArgument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  std::bernoulli_distribution keep_dist(keep);
  Matrix mask(value(x).rows(), value(x).cols());
  for (Eigen::Index c = 0; c < mask.cols(); ++c)
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      mask(r, c) = keep_dist(rng) ? 1.0 / keep : 0.0;
  Id out = emplace(value(x).cwiseProduct(mask), {});
  nodes_[out].back = [this, x, out, mask = std::move(mask)] {
    mutable_grad(x) += grad(out).cwiseProduct(mask);
  };
  return out;
}

Tape::Id Tape::gather_rows(Id table, std::vector<int> rows) {
  const Matrix& t = value(table);
  Matrix v(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.rows())
      throw InvalidArgument("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  }
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, table, out, rows = std::move(rows)] {
    Matrix& gt = mutable_grad(table);
    const Matrix& g = grad(out);
    for (std::size_t i = 0; i < rows.size(); ++i)
      gt.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  };
  return out;
}

Tape::Id Tape::slice_cols(Id x, int first_col, int width) {
  Id out = emplace(value(x).middleCols(first_col, width), {});
  nodes_[out].back = [this, x, out, first_col, width] {
    mutable_grad(x).middleCols(first_col, width) += grad(out);
  };
  return out;
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no parts");
  Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Id p : parts) cols += value(p).cols();
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (Id p : parts) {
    v.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, out, parts] {
    Eigen::Index at = 0;
    for (Id p : parts) {
      const Eigen::Index w = value(p).cols();
      mutable_grad(p) += grad(out).middleCols(at, w);
      at += w;
    }
  };
  return out;
}

Tape::Id Tape::softmax_rows(Id x) {
  const Matrix& xv = value(x);
  Matrix v(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    Eigen::ArrayXd shifted = xv.row(r).array() - xv.row(r).maxCoeff();
    Eigen::ArrayXd e = shifted.exp();
    v.row(r) = (e / e.sum()).matrix();
  }
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, x, out] {
    const Matrix& y = value(out);
    const Matrix& g = grad(out);
    Matrix& gx = mutable_grad(x);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      gx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  };
  return out;
}

Tape::Id Tape::rowwise_max(Id x) {
  const Matrix& xv = value(x);
  Matrix v(xv.rows(), 1);
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(xv.rows()));
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    Eigen::Index c;
    v(r, 0) = xv.row(r).maxCoeff(&c);
    argmax[static_cast<std::size_t>(r)] = c;
  }
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, x, out, argmax = std::move(argmax)] {
    Matrix& gx = mutable_grad(x);
    const Matrix& g = grad(out);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      gx(r, argmax[static_cast<std::size_t>(r)]) += g(r, 0);
  };
  return out;
}

Tape::Id Tape::normalize_rows(Id x) {
  const Matrix& xv = value(x);
  Matrix v(xv.rows(), xv.cols());
  Vector norms(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double n = xv.row(r).norm();
    if (n == 0.0) throw DegenerateInput("normalize_rows: zero-norm row");
    norms[r] = n;
    v.row(r) = xv.row(r) / n;
  }
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, x, out, norms = std::move(norms)] {
    const Matrix& y = value(out);
    const Matrix& g = grad(out);
    Matrix& gx = mutable_grad(x);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      gx.row(r) += (g.row(r) - dot * y.row(r)) / norms[r];
    }
  };
  return out;
}

Tape::Id Tape::sum_all(Id x) {
  Matrix v(1, 1);
  v(0, 0) = value(x).sum();
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, x, out] {
    mutable_grad(x).array() += grad(out)(0, 0);
  };
  return out;
}

Tape::Id Tape::mean_all(Id x) {
  const double n = static_cast<double>(value(x).size());
  Matrix v(1, 1);
  v(0, 0) = value(x).sum() / n;
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, x, out, n] {
    mutable_grad(x).array() += grad(out)(0, 0) / n;
  };
  return out;
}

Tape::Id Tape::transpose(Id x) {
  Id out = emplace(value(x).transpose(), {});
  nodes_[out].back = [this, x, out] {
    mutable_grad(x) += grad(out).transpose();
  };
  return out;
}

Tape::Id Tape::cross_entropy_with_logits(
    Id logits, std::vector<std::pair<int, double>> target) {
  const Matrix& lv = value(logits);
  if (lv.cols() != 1)
    throw InvalidArgument("cross_entropy_with_logits: logits must be a column");
  const Eigen::Index n = lv.rows();
  for (const auto& [idx, w] : target) {
    if (idx < 0 || idx >= n)
      throw InvalidArgument("cross_entropy_with_logits: target index out of range");
    if (w < 0.0)
      throw InvalidArgument("cross_entropy_with_logits: negative target weight");
  }
  const double m = lv.col(0).maxCoeff();
  const double lse = m + std::log((lv.col(0).array() - m).exp().sum());
  const double floor = std::log(kLogFloor);

  double loss = 0.0;
  // Per-entry dL/dlogp, zero where the floor clamps.
  std::vector<std::pair<int, double>> glogp;
  glogp.reserve(target.size());
  for (const auto& [idx, w] : target) {
    if (w == 0.0) continue;
    const double logp = lv(idx, 0) - lse;
    if (logp > floor) {
      loss -= w * logp;
      glogp.emplace_back(idx, -w);
    } else {
      loss -= w * floor;
    }
  }
  Matrix v(1, 1);
  v(0, 0) = loss;
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, logits, out, lse, glogp = std::move(glogp)] {
    const double g = grad(out)(0, 0);
    const Matrix& lv = value(logits);
    Vector p = (lv.col(0).array() - lse).exp();
    double gsum = 0.0;
    for (const auto& [idx, gw] : glogp) gsum += gw;
    Matrix& gl = mutable_grad(logits);
    gl.col(0) -= g * gsum * p;
    for (const auto& [idx, gw] : glogp) gl(idx, 0) += g * gw;
  };
  return out;
}

Tape::Id Tape::logistic_loss(Id score, int label) {
  if (value(score).size() != 1)
    throw InvalidArgument("logistic_loss: score must be scalar");
  if (label != 0 && label != 1)
    throw InvalidArgument("logistic_loss: label must be 0 or 1");
  const double t = label == 1 ? 1.0 : -1.0;
  const double z = t * value(score)(0, 0);
  Matrix v(1, 1);
  v(0, 0) = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  Id out = emplace(std::move(v), {});
  nodes_[out].back = [this, score, out, t, z] {
    const double sig = 1.0 / (1.0 + std::exp(z));  // sigmoid(-z)
    mutable_grad(score)(0, 0) += grad(out)(0, 0) * (-t * sig);
  };
  return out;
}

void Tape::backward(Id loss) {
  if (value(loss).size() != 1)
    throw InvalidArgument("backward: loss must be 1x1");
  if (!std::isfinite(value(loss)(0, 0)))
    throw EvaluationError("backward: non-finite loss");
  for (auto& node : nodes_)
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  nodes_[loss].grad(0, 0) = 1.0;
  for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back();
}

GradientReport grad_check(
    const std::vector<ParamRef>& params,
    const std::function<double(std::vector<Matrix>*)>& loss_fn,
    double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1e-3)
    throw InvalidArgument("grad_check: epsilon must be in (0, 1e-3]");
  std::vector<Matrix> analytic;
  const double base = loss_fn(&analytic);
  if (!std::isfinite(base)) throw EvaluationError("grad_check: non-finite loss");
  if (analytic.size() != params.size())
    throw InvalidArgument("grad_check: gradient count mismatch");

  // One central difference per parameter group, along a deterministic unit
  // direction seeded by the group's name. Individual entries with near-zero
  // gradients sit below what f64 differencing can resolve at 1e-4 relative,
  // so the comparison is directional; any wrong backward term still shows
  // up in the projection.
  GradientReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& theta = *params[p].value;
    if (theta.size() == 0) continue;
    std::mt19937_64 rng(fnv1a(params[p].name));
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix direction(theta.rows(), theta.cols());
    for (Eigen::Index c = 0; c < theta.cols(); ++c)
      for (Eigen::Index r = 0; r < theta.rows(); ++r)
        direction(r, c) = dist(rng);
    direction /= direction.norm();

    const Matrix saved = theta;
    auto central = [&](double eps) {
      theta = saved + eps * direction;
      const double up = loss_fn(nullptr);
      theta = saved - eps * direction;
      const double down = loss_fn(nullptr);
      theta = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw EvaluationError("grad_check: non-finite loss");
      return (up - down) / (2.0 * eps);
    };
    // Richardson-extrapolated central difference: cancels the eps^2
    // truncation term that otherwise dominates small projections.
    const double numeric =
        (4.0 * central(epsilon / 2.0) - central(epsilon)) / 3.0;
    const double a = analytic[p].cwiseProduct(direction).sum();
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = params[p].name;
    }
  }
  return report;
}

AdamOptimizer::AdamOptimizer(std::vector<Matrix*> params, Options opts,
                             std::vector<double> lr_multipliers)
    : params_(std::move(params)),
      opts_(opts),
      lr_multipliers_(std::move(lr_multipliers)) {
  if (!lr_multipliers_.empty() && lr_multipliers_.size() != params_.size())
    throw InvalidArgument("AdamOptimizer: multiplier count mismatch");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Matrix* p : params_) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void AdamOptimizer::step(const std::vector<Matrix>& grads) {
  if (grads.size() != params_.size())
    throw InvalidArgument("AdamOptimizer: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
  const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const double lr =
        opts_.lr * (lr_multipliers_.empty() ? 1.0 : lr_multipliers_[i]);
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * grads[i];
    v_[i] = opts_.beta2 * v_[i].array().matrix() +
            (1.0 - opts_.beta2) * grads[i].cwiseProduct(grads[i]);
    params_[i]->array() -=
        lr * (m_[i].array() / bc1) /
        ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

}  // namespace qap
