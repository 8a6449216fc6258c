#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "loop/reach.hpp"
#include "loop/rng.hpp"

using namespace loop;
using reach::Adj;

namespace {

Adj from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
  Adj a(static_cast<size_t>(n) * n, 0);
  for (auto [u, v] : edges) a[static_cast<int64_t>(u) * n + v] = 1;
  return a;
}

// boolean matrix powers: reach = union of (A|Actx)^k for k = 1..n
Adj powers_oracle(const Adj& a, const Adj& ctx, int n) {
  Adj u(static_cast<size_t>(n) * n, 0);
  for (size_t i = 0; i < u.size(); ++i) u[i] = a[i] | ctx[i];
  Adj total = u, power = u;
  for (int k = 2; k <= n; ++k) {
    Adj next(u.size(), 0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        uint8_t any = 0;
        for (int m = 0; m < n && !any; ++m)
          any = power[static_cast<int64_t>(i) * n + m] &
                u[static_cast<int64_t>(m) * n + j];
        next[static_cast<int64_t>(i) * n + j] = any;
      }
    power = next;
    for (size_t i = 0; i < total.size(); ++i) total[i] |= power[i];
  }
  return total;
}

// one step of the boolean recurrence the layer implements:
// S' = S or S.S or A_hidden
Adj boolean_step(const Adj& s, const Adj& hidden, int n) {
  Adj out = s;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      int64_t ji = static_cast<int64_t>(j) * n + i;
      if (hidden[ji]) out[ji] = 1;
      for (int k = 0; k < n && !out[ji]; ++k)
        if (s[static_cast<int64_t>(j) * n + k] &&
            s[static_cast<int64_t>(k) * n + i])
          out[ji] = 1;
    }
  return out;
}

Adj random_adj(int n, double density, Rng& rng, bool self_loops = false) {
  Adj a(static_cast<size_t>(n) * n, 0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      if (i == j && !self_loops) continue;
      if (rng.next_double() < density) a[static_cast<int64_t>(j) * n + i] = 1;
    }
  return a;
}

}  // namespace

TEST_CASE("build: weight matrices carry the advertised block structure") {
  int n = 4;
  auto a = from_edges(n, {{0, 1}, {1, 2}, {3, 0}});
  auto c = reach::build(a, n, 500.0);
  int d = 2 * n;
  REQUIRE(c.K.size() == static_cast<size_t>(d) * d);
  for (int r = 0; r < d; ++r)
    for (int col = 0; col < d; ++col) {
      double k = c.K[reach::Construction::idx(r, col, d)];
      double q = c.Q[reach::Construction::idx(r, col, d)];
      double v = c.V[reach::Construction::idx(r, col, d)];
      double w1 = c.W1[reach::Construction::idx(r, col, d)];
      double w2 = c.W2[reach::Construction::idx(r, col, d)];
      CHECK(k == ((r == col && r < n) ? 500.0 : 0.0));
      CHECK(q == ((r == col && r >= n) ? 1.0 : 0.0));
      CHECK(v == ((r == col && r >= n) ? 1.0 : 0.0));
      CHECK(w2 == (r == col ? 1.0 : 0.0));
      // W1 lower-left holds the hidden graph: column j -> row n+i per edge
      bool edge = r >= n && col < n && a[static_cast<int64_t>(col) * n + (r - n)];
      CHECK(w1 == (edge ? 1.0 : 0.0));
    }
  CHECK_THROWS_AS(reach::build(a, n, 0.0), num::UsageError);
  Adj bad = a;
  bad[0] = 2;
  CHECK_THROWS_AS(reach::build(bad, n), num::UsageError);
  CHECK_THROWS_AS(reach::build(a, n + 1), num::ShapeError);
}

TEST_CASE("run: single hidden edge appears after one loop") {
  int n = 3;
  auto a = from_edges(n, {{0, 1}});
  Adj ctx(static_cast<size_t>(n) * n, 0);
  auto got = reach::run(reach::build(a, n), ctx, 1);
  CHECK(got == from_edges(n, {{0, 1}}));
}

TEST_CASE("run: empty graphs stay empty") {
  int n = 5;
  Adj a(static_cast<size_t>(n) * n, 0), ctx(a);
  auto got = reach::run(reach::build(a, n), ctx, 4);
  for (uint8_t x : got) CHECK(x == 0);
  CHECK_THROWS_AS(reach::run(reach::build(a, n), ctx, 0), num::UsageError);
}

TEST_CASE("run: chain split across hidden and context graphs") {
  // 0->1 hidden, 1->2 context, 2->3 hidden: diameter 3
  int n = 4;
  auto a = from_edges(n, {{0, 1}, {2, 3}});
  auto ctx = from_edges(n, {{1, 2}});
  CHECK(reach::diameter(a, ctx, n) == 3);
  CHECK(reach::loops_needed(3) == 3);
  auto c = reach::build(a, n);
  auto want = reach::bfs_oracle(a, ctx);
  CHECK(reach::run(c, ctx, 3) == want);
  // one loop only finds direct edges
  auto one = reach::run(c, ctx, 1);
  CHECK(one[0 * n + 1] == 1);
  CHECK(one[0 * n + 2] == 0);
  CHECK(one[0 * n + 3] == 0);
}

TEST_CASE("loops_needed matches ceil(log2 D) + 1") {
  CHECK(reach::loops_needed(1) == 1);
  CHECK(reach::loops_needed(2) == 2);
  CHECK(reach::loops_needed(3) == 3);
  CHECK(reach::loops_needed(4) == 3);
  CHECK(reach::loops_needed(5) == 4);
  CHECK(reach::loops_needed(8) == 4);
  CHECK(reach::loops_needed(9) == 5);
}

TEST_CASE("bfs oracle agrees with boolean matrix powers") {
  Rng rng(42, "reach.test.powers");
  for (int trial = 0; trial < 60; ++trial) {
    int n = rng.next_int(2, 8);
    auto a = random_adj(n, 0.3, rng);
    auto ctx = random_adj(n, 0.2, rng);
    CHECK(reach::bfs_oracle(a, ctx) == powers_oracle(a, ctx, n));
  }
}

TEST_CASE("intermediate states follow the squaring recurrence exactly") {
  Rng rng(7, "reach.test.squaring");
  for (int trial = 0; trial < 40; ++trial) {
    int n = rng.next_int(2, 9);
    auto a = random_adj(n, 0.3, rng);
    auto ctx = random_adj(n, 0.3, rng);
    auto c = reach::build(a, n);
    Adj expected = ctx;
    for (int loops = 1; loops <= 4; ++loops) {
      expected = boolean_step(expected, a, n);
      CHECK(reach::run(c, ctx, loops) == expected);
    }
  }
}

TEST_CASE("marks are monotone in the loop count") {
  Rng rng(19, "reach.test.monotone");
  for (int trial = 0; trial < 30; ++trial) {
    int n = rng.next_int(3, 10);
    auto a = random_adj(n, 0.2, rng);
    auto ctx = random_adj(n, 0.2, rng);
    auto c = reach::build(a, n);
    Adj prev = reach::run(c, ctx, 1);
    for (int loops = 2; loops <= 5; ++loops) {
      Adj cur = reach::run(c, ctx, loops);
      for (size_t i = 0; i < cur.size(); ++i) CHECK(cur[i] >= prev[i]);
      prev = cur;
    }
  }
}

TEST_CASE("randomized verification over small graphs finds no mismatch") {
  auto rep = reach::verify(12, 500, 2024);
  CHECK(rep.trials == 500);
  CHECK(rep.ok());
  CHECK(rep.mismatches.empty());
  CHECK_THROWS_AS(reach::verify(17, 1, 0), num::UsageError);
}

TEST_CASE("loop bound is tight: L-1 loops miss the far end of a path") {
  auto p = reach::path_instance(4);
  REQUIRE(p.n == 5);
  CHECK(reach::diameter(p.a, p.a_ctx, p.n) == 4);
  int loops = reach::loops_needed(4);
  CHECK(loops == 3);
  auto c = reach::build(p.a, p.n);
  auto full = reach::run(c, p.a_ctx, loops);
  CHECK(full == reach::bfs_oracle(p.a, p.a_ctx));
  CHECK(full[0 * p.n + 4] == 1);
  auto short_run = reach::run(c, p.a_ctx, loops - 1);
  // distance coverage after i loops is 2^(i-1): two loops reach distance 2
  CHECK(short_run[0 * p.n + 2] == 1);
  CHECK(short_run[0 * p.n + 3] == 0);
  CHECK(short_run[0 * p.n + 4] == 0);
}

TEST_CASE("tightness holds for longer alternating paths") {
  for (int len : {5, 8, 9}) {
    auto p = reach::path_instance(len);
    int loops = reach::loops_needed(len);
    auto c = reach::build(p.a, p.n);
    auto full = reach::run(c, p.a_ctx, loops);
    CHECK(full == reach::bfs_oracle(p.a, p.a_ctx));
    auto shorter = reach::run(c, p.a_ctx, loops - 1);
    CHECK(shorter[0 * p.n + len] == 0);
  }
}

TEST_CASE("soft attention at large beta matches hard selection") {
  // self-loops in the context keep every frontier non-empty, so the softmax
  // never has to renormalize an all-underflow row
  Rng rng(55, "reach.test.soft");
  for (int trial = 0; trial < 25; ++trial) {
    int n = rng.next_int(2, 8);
    auto a = random_adj(n, 0.3, rng);
    auto ctx = random_adj(n, 0.2, rng);
    for (int j = 0; j < n; ++j) ctx[static_cast<int64_t>(j) * n + j] = 1;
    auto c = reach::build(a, n);
    int loops = reach::loops_needed(reach::diameter(a, ctx, n));
    auto hard = reach::run(c, ctx, loops, true);
    auto soft = reach::run(c, ctx, loops, false);
    CHECK(hard == soft);
    CHECK(hard == reach::bfs_oracle(a, ctx));
  }
}
