#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "loop/model.hpp"
#include "loop/rng.hpp"
#include "loop/tensor.hpp"

using namespace loop;
using num::Shape;
using num::Tensor;

namespace {

// Central finite differences against the analytic gradient. `build` must
// construct the scalar loss from the given leaf tensors on every call.
template <class T>
void check_grads(std::vector<Tensor<T>>& leaves,
                 const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& build,
                 T tol, T eps) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  auto loss = build(leaves);
  num::backward(loss);
  for (auto& l : leaves) {
    for (int64_t i = 0; i < l.size(); ++i) {
      T orig = l.data()[i];
      l.data()[i] = orig + eps;
      T up;
      {
        num::NoGradGuard ng;
        up = build(leaves).item();
      }
      l.data()[i] = orig - eps;
      T dn;
      {
        num::NoGradGuard ng;
        dn = build(leaves).item();
      }
      l.data()[i] = orig;
      T fd = (up - dn) / (2 * eps);
      T an = l.grad()[i];
      T denom = std::max(T(1), std::max(std::abs(fd), std::abs(an)));
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

template <class T>
Tensor<T> rand_leaf(const Shape& s, Rng& rng, T sd = T(0.8)) {
  return Tensor<T>::randn(s, rng, sd, true);
}

}  // namespace

TEST_CASE("matmul forward matches hand value") {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 1}, {0, 1});
  auto c = num::matmul(a, b);
  CHECK(c.data()[0] == doctest::Approx(2.0));
  CHECK(c.data()[1] == doctest::Approx(4.0));
}

TEST_CASE("softmax forward matches hand value and properties") {
  Tensor<double> x({1, 2}, {0.0, std::log(3.0)});
  auto p = num::softmax(x, -1);
  CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(7);
  auto y = Tensor<double>::randn({4, 6}, rng, 2.0);
  auto py = num::softmax(y, -1);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += py.data()[r * 6 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // shift invariance
  auto y2 = num::add_scalar(y, 123.0);
  auto py2 = num::softmax(y2, -1);
  for (int64_t i = 0; i < py.size(); ++i)
    CHECK(py.data()[i] == doctest::Approx(py2.data()[i]).epsilon(1e-9));
}

TEST_CASE("rms_norm forward matches hand value") {
  // x = [3,4]: mean square 12.5, output x / sqrt(12.5 + eps)
  Tensor<double> x({1, 2}, {3.0, 4.0});
  Tensor<double> w({2}, {1.0, 1.0});
  auto y = num::rms_norm(x, w, 0.0);
  CHECK(y.data()[0] == doctest::Approx(3.0 / std::sqrt(12.5)));
  CHECK(y.data()[1] == doctest::Approx(4.0 / std::sqrt(12.5)));
}

TEST_CASE("rope rotates pairs and preserves norm") {
  Tensor<double> x({1, 2}, {1.0, 0.0});
  auto y = num::rope_apply(x, {1}, 10000.0, 1);
  CHECK(y.data()[0] == doctest::Approx(std::cos(1.0)));
  CHECK(y.data()[1] == doctest::Approx(std::sin(1.0)));

  Rng rng(3);
  auto v = Tensor<double>::randn({5, 8}, rng, 1.0);
  auto r = num::rope_apply(v, {0, 1, 2, 3, 9}, 10000.0, 2);
  for (int t = 0; t < 5; ++t) {
    double n0 = 0, n1 = 0;
    for (int j = 0; j < 8; ++j) {
      n0 += v.data()[t * 8 + j] * v.data()[t * 8 + j];
      n1 += r.data()[t * 8 + j] * r.data()[t * 8 + j];
    }
    CHECK(n0 == doctest::Approx(n1).epsilon(1e-10));
  }
  // position 0 is the identity
  for (int j = 0; j < 8; ++j)
    CHECK(r.data()[j] == doctest::Approx(v.data()[j]).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits is log V") {
  Tensor<double> logits({1, 4}, {0.5, 0.5, 0.5, 0.5});
  auto l = num::cross_entropy(logits, {2});
  CHECK(l.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy ignores masked positions") {
  Tensor<double> logits({3, 4}, {1, 2, 3, 4, 0, 0, 0, 0, 4, 3, 2, 1});
  auto l = num::cross_entropy(logits, {num::kIgnoreIndex, 1, num::kIgnoreIndex});
  CHECK(l.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("quadratic gradient: d(x.x)/dx = 2x") {
  Tensor<double> x({3}, {1.0, -2.0, 0.5}, true);
  auto loss = num::sum(num::mul(x, x));
  num::backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
  CHECK(x.grad()[2] == doctest::Approx(1.0));
}

TEST_CASE("finite differences, elementwise and reductions, double") {
  Rng rng(11);
  std::vector<Tensor<double>> leaves = {rand_leaf<double>({3, 4}, rng),
                                        rand_leaf<double>({3, 4}, rng)};
  check_grads<double>(
      leaves,
      [](auto& l) {
        auto z = num::mul(num::add(l[0], l[1]), num::sub(l[0], l[1]));
        z = num::add(num::sigmoid(z), num::silu(l[0]));
        return num::mean(z);
      },
      1e-6, 1e-5);
}

TEST_CASE("finite differences, matmul family, double") {
  Rng rng(12);
  std::vector<Tensor<double>> leaves = {rand_leaf<double>({3, 5}, rng),
                                        rand_leaf<double>({5, 4}, rng),
                                        rand_leaf<double>({6, 4}, rng),
                                        rand_leaf<double>({4}, rng)};
  check_grads<double>(
      leaves,
      [](auto& l) {
        auto y = num::matmul(l[0], l[1]);                 // [3,4]
        auto z = num::matmul_transposed(y, l[2]);         // [3,6]
        auto w = num::add_rowvec(y, l[3]);
        return num::add(num::mean(z), num::mean(w));
      },
      1e-6, 1e-5);
}

TEST_CASE("finite differences, norm softmax log clamp, double") {
  Rng rng(13);
  std::vector<Tensor<double>> leaves = {rand_leaf<double>({4, 6}, rng),
                                        rand_leaf<double>({6}, rng, 0.3)};
  for (auto& x : leaves[1].data()) x += 1.0;  // keep norm weight away from 0
  check_grads<double>(
      leaves,
      [](auto& l) {
        auto n = num::rms_norm(l[0], l[1], 1e-5);
        auto p = num::softmax(n, -1);
        auto lg = num::log_guarded(num::add_scalar(num::sigmoid(n), 0.01));
        auto c = num::clamp(l[0], -0.9, 0.9);
        return num::add(num::mean(num::mul(p, lg)), num::mean(c));
      },
      1e-6, 1e-5);
}

TEST_CASE("finite differences, attention stack, double") {
  Rng rng(14);
  int rows = 2, m = 3, d = 8, heads = 2;
  std::vector<Tensor<double>> leaves = {rand_leaf<double>({rows * m, d}, rng),
                                        rand_leaf<double>({rows * m, d}, rng),
                                        rand_leaf<double>({rows * m, d}, rng)};
  std::vector<int> pos = {0, 1, 2, 0, 1, 2};
  check_grads<double>(
      leaves,
      [&](auto& l) {
        auto q = num::rope_apply(l[0], pos, 10000.0, heads);
        auto k = num::rope_apply(l[1], pos, 10000.0, heads);
        auto s = num::attention_scores(q, k, rows, heads);
        auto p = num::softmax(s, -1);
        auto o = num::attention_mix(p, l[2]);
        return num::mean(o);
      },
      1e-6, 1e-5);
}

TEST_CASE("finite differences, embedding and cross entropy, double") {
  Rng rng(15);
  std::vector<Tensor<double>> leaves = {rand_leaf<double>({7, 5}, rng),
                                        rand_leaf<double>({5, 7}, rng)};
  std::vector<int> ids = {0, 3, 6, 3};
  std::vector<int> tg = {1, num::kIgnoreIndex, 5, 2};
  check_grads<double>(
      leaves,
      [&](auto& l) {
        auto e = num::embedding(l[0], ids);
        auto logits = num::matmul(e, l[1]);
        return num::cross_entropy(logits, tg);
      },
      1e-6, 1e-5);
}

TEST_CASE("finite differences, swiglu, float tolerance") {
  Rng rng(16);
  std::vector<Tensor<float>> leaves = {rand_leaf<float>({3, 4}, rng),
                                       rand_leaf<float>({4, 6}, rng),
                                       rand_leaf<float>({4, 6}, rng),
                                       rand_leaf<float>({6, 4}, rng)};
  check_grads<float>(
      leaves,
      [](auto& l) { return num::mean(num::swiglu(l[0], l[1], l[2], l[3])); },
      1e-2f, 1e-2f);
}

TEST_CASE("finite differences, swiglu, double") {
  Rng rng(17);
  std::vector<Tensor<double>> leaves = {rand_leaf<double>({3, 4}, rng),
                                        rand_leaf<double>({4, 6}, rng),
                                        rand_leaf<double>({4, 6}, rng),
                                        rand_leaf<double>({6, 4}, rng)};
  check_grads<double>(
      leaves,
      [](auto& l) { return num::mean(num::swiglu(l[0], l[1], l[2], l[3])); },
      1e-6, 1e-5);
}

TEST_CASE("detach blocks gradient flow") {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  auto y = num::mul(num::detach(x), x);
  auto loss = num::sum(y);
  num::backward(loss);
  // d/dx (c * x) with c frozen at x's value
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("backward visits each node exactly once in a diamond graph") {
  Tensor<double> x({2}, {0.3, -0.4}, true);
  auto a = num::sigmoid(x);
  auto b = num::silu(x);
  auto c = num::add(num::mul(a, b), num::add(a, b));  // a, b reused
  auto loss = num::sum(c);
  auto stats = num::backward(loss);
  CHECK(a.node()->visit_count == 1);
  CHECK(b.node()->visit_count == 1);
  CHECK(x.node()->visit_count == 1);
  CHECK(stats.adjoint_calls >= 5);
  // gradient agrees with finite differences through the shared nodes
  std::vector<Tensor<double>> leaves = {x};
  check_grads<double>(
      leaves,
      [](auto& l) {
        auto a = num::sigmoid(l[0]);
        auto b = num::silu(l[0]);
        return num::sum(num::add(num::mul(a, b), num::add(a, b)));
      },
      1e-6, 1e-5);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  num::NoGradGuard ng;
  auto y = num::mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("shape errors are reported") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(num::add(a, b), num::ShapeError);
  CHECK_THROWS_AS(num::matmul(a, a), num::ShapeError);
  CHECK_THROWS_AS(num::embedding(a, std::vector<int>{2}), num::IndexError);
  CHECK_THROWS_AS(num::cross_entropy(a, {7, 0}), num::IndexError);
}

TEST_CASE("rng streams are independent and deterministic") {
  Rng a(42, "alpha");
  Rng a2(42, "alpha");
  Rng b(42, "beta");
  CHECK(a.next_u64() == a2.next_u64());
  CHECK(a.next_u64() != b.next_u64());
  Rng c(42);
  auto s1 = c.stream("x");
  auto s2 = c.stream("x");
  CHECK(s1.next_u64() == s2.next_u64());
  // uniformity smoke check
  Rng u(9);
  int buckets[4] = {0, 0, 0, 0};
  for (int i = 0; i < 4000; ++i) buckets[u.next_below(4)]++;
  for (int k = 0; k < 4; ++k) CHECK(std::abs(buckets[k] - 1000) < 150);
}
