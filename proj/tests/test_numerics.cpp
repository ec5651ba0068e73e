#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "qap/autodiff.hpp"
#include "qap/numerics.hpp"

using namespace qap;

TEST_CASE("softmax closed forms") {
  Vector v(2);
  v << 0.0, 0.0;
  auto p = softmax(v);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  v << std::log(2.0), 0.0;
  p = softmax(v);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Overflows without max-subtraction.
  v << 1000.0, 1000.0;
  p = softmax(v);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax rejects empty input") {
  Vector empty(0);
  CHECK_THROWS_AS(softmax(empty), InvalidArgument);
}

TEST_CASE("softmax normalization and shift invariance over random vectors") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> dist(0.0, 3.0);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector v(len(rng));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
    const auto p = softmax(v);
    CHECK(std::abs(p.probs().sum() - 1.0) <= 1e-9);
    const double shift = dist(rng);
    const auto q = softmax(Vector(v.array() + shift));
    for (Eigen::Index i = 0; i < v.size(); ++i)
      CHECK(std::abs(p[i] - q[i]) <= 1e-12);
  }
}

TEST_CASE("cross_entropy_to_target closed forms") {
  // Near-delta match.
  const double eps = 1e-13;
  Vector t(2);
  t << 1.0, 0.0;
  Vector lp(2);
  lp << std::log(1.0 - eps), std::log(eps);
  CHECK(cross_entropy_to_target(ProbabilityVector(t), lp) ==
        doctest::Approx(0.0).epsilon(1e-9));

  const int L = 7;
  Vector u = Vector::Constant(L, 1.0 / L);
  Vector lu = Vector::Constant(L, std::log(1.0 / L));
  CHECK(cross_entropy_to_target(ProbabilityVector(u), lu) ==
        doctest::Approx(std::log(static_cast<double>(L))).epsilon(1e-12));

  Vector t2(2);
  t2 << 0.5, 0.5;
  Vector lp2(2);
  lp2 << std::log(0.25), std::log(0.75);
  CHECK(cross_entropy_to_target(ProbabilityVector(t2), lp2) ==
        doctest::Approx(-0.5 * (std::log(0.25) + std::log(0.75)))
            .epsilon(1e-12));
  CHECK(cross_entropy_to_target(ProbabilityVector(t2), lp2) ==
        doctest::Approx(0.8369).epsilon(1e-4));
}

TEST_CASE("cross_entropy_to_target rejects length mismatch") {
  Vector t(2);
  t << 0.5, 0.5;
  Vector lp(3);
  lp << -1.0, -1.0, -1.0;
  CHECK_THROWS_AS(cross_entropy_to_target(ProbabilityVector(t), lp),
                  InvalidArgument);
}

TEST_CASE("KL properties over random distributions") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.01, 1.0);
  std::uniform_int_distribution<int> len(2, 20);
  for (int trial = 0; trial < 300; ++trial) {
    const int L = len(rng);
    Vector p(L), q(L);
    for (int i = 0; i < L; ++i) {
      p[i] = unif(rng);
      q[i] = unif(rng);
    }
    p /= p.sum();
    q /= q.sum();
    ProbabilityVector pp(p), qq(q);
    // KL(p||p) = 0
    CHECK(std::abs(cross_entropy_to_target(pp, Vector(p.array().log())) -
                   entropy(pp)) <= 1e-12);
    // KL(p||q) >= 0
    CHECK(cross_entropy_to_target(pp, Vector(q.array().log())) >=
          entropy(pp) - 1e-12);
  }
}

TEST_CASE("cosine similarity") {
  Vector u(2), v(2);
  u << 3.0, 4.0;
  CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-12));

  u << 1.0, 0.0;
  v << 0.0, 1.0;
  CHECK(cosine_similarity(u, v) == doctest::Approx(0.0));

  u << 1.0, 1.0;
  v << 1.0, -1.0;
  CHECK(cosine_similarity(u, v) == doctest::Approx(0.0));

  Vector zero = Vector::Zero(2);
  CHECK_THROWS_AS(cosine_similarity(zero, v), DegenerateInput);
}

TEST_CASE("grad_check on a quadratic") {
  Matrix p(3, 2);
  p << 0.3, -1.2, 0.7, 2.0, -0.4, 0.1;
  auto loss_fn = [&](std::vector<Matrix>* grads) {
    if (grads) *grads = {p};
    return 0.5 * p.squaredNorm();
  };
  const auto report = grad_check({{"p", &p}}, loss_fn, 1e-5);
  CHECK(report.max_relative_error < 1e-7);
}

TEST_CASE("grad_check on softmax cross-entropy, 5 logits") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix logits(5, 1);
  for (int i = 0; i < 5; ++i) logits(i, 0) = dist(rng);
  const std::vector<std::pair<int, double>> target = {{0, 0.2}, {2, 0.5},
                                                      {4, 0.3}};
  auto loss_fn = [&](std::vector<Matrix>* grads) {
    Tape tape;
    Tape::Id x = tape.input(logits);
    Tape::Id loss = tape.cross_entropy_with_logits(x, target);
    if (grads) {
      tape.backward(loss);
      *grads = {tape.grad(x)};
    }
    return tape.value(loss)(0, 0);
  };
  const auto report = grad_check({{"logits", &logits}}, loss_fn, 1e-5);
  CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("grad_check validates epsilon") {
  Matrix p = Matrix::Ones(1, 1);
  auto loss_fn = [&](std::vector<Matrix>* grads) {
    if (grads) *grads = {p};
    return 0.5 * p.squaredNorm();
  };
  CHECK_THROWS_AS(grad_check({{"p", &p}}, loss_fn, 0.0), InvalidArgument);
  CHECK_THROWS_AS(grad_check({{"p", &p}}, loss_fn, 1e-2), InvalidArgument);
}

TEST_CASE("tape elementwise and reduction ops differentiate correctly") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix a(3, 3), b(3, 3);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) {
      a(r, c) = dist(rng);
      b(r, c) = dist(rng) + 3.0;  // keep cdiv well-conditioned
    }
  auto loss_fn = [&](std::vector<Matrix>* grads) {
    Tape tape;
    Tape::Id ia = tape.input(a);
    Tape::Id ib = tape.input(b);
    Tape::Id mix = tape.cdiv(tape.cmul(tape.gelu(ia), ib), ib);
    Tape::Id sm = tape.softmax_rows(tape.matmul_nt(mix, ib));
    Tape::Id nrm = tape.normalize_rows(tape.add(sm, ib));
    Tape::Id loss = tape.mean_all(tape.rowwise_max(nrm));
    loss = tape.add(loss, tape.sum_all(tape.layer_norm(
                              mix, tape.input(Matrix::Ones(1, 3)),
                              tape.input(Matrix::Zero(1, 3)), 1e-8)));
    if (grads) {
      tape.backward(loss);
      *grads = {tape.grad(ia), tape.grad(ib)};
    }
    return tape.value(loss)(0, 0);
  };
  const auto report = grad_check({{"a", &a}, {"b", &b}}, loss_fn, 1e-5);
  CHECK(report.max_relative_error < 1e-5);
}
