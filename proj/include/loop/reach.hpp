#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include "loop/rng.hpp"
#include "loop/tensor.hpp"

namespace loop::reach {

// Adjacency matrices are row-major n*n with a[j*n + i] = 1 meaning an edge
// from vertex j to vertex i.
using Adj = std::vector<uint8_t>;

inline void check_binary(const Adj& a, int n, const char* name) {
  if (static_cast<int64_t>(a.size()) != static_cast<int64_t>(n) * n)
    throw num::ShapeError(std::string(name) + ": wrong adjacency size");
  for (uint8_t x : a)
    if (x > 1) throw num::UsageError(std::string(name) + ": non-binary entry");
}

// Hand-built one-layer, one-head transformer that decides reachability over
// the union of a hidden graph (baked into the FFN) and a context graph (fed
// as input). Hidden width 2n: upper half holds the vertex one-hot, lower
// half accumulates the known reachable set.
struct Construction {
  int n = 0;
  double beta = 1e4;
  // full 2n x 2n weight matrices, kept explicit so their block structure is
  // testable; w1's lower-left block encodes the hidden graph
  std::vector<double> K, Q, V, W1, W2;
  Adj hidden;  // the adjacency baked into W1

  static int64_t idx(int r, int c, int dim) {
    return static_cast<int64_t>(r) * dim + c;
  }
};

inline Construction build(const Adj& a, int n, double beta = 1e4) {
  check_binary(a, n, "build");
  if (!(beta > 0)) throw num::UsageError("build: beta must be positive");
  Construction c;
  c.n = n;
  c.beta = beta;
  c.hidden = a;
  int d = 2 * n;
  c.K.assign(static_cast<size_t>(d) * d, 0.0);
  c.Q.assign(static_cast<size_t>(d) * d, 0.0);
  c.V.assign(static_cast<size_t>(d) * d, 0.0);
  c.W1.assign(static_cast<size_t>(d) * d, 0.0);
  c.W2.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    c.K[Construction::idx(i, i, d)] = beta;          // beta [[I,0],[0,0]]
    c.Q[Construction::idx(n + i, n + i, d)] = 1.0;   // [[0,0],[0,I]]
    c.V[Construction::idx(n + i, n + i, d)] = 1.0;   // [[0,0],[0,I]]
  }
  for (int i = 0; i < d; ++i) c.W2[Construction::idx(i, i, d)] = 1.0;  // I_2n
  // W1 = [[0,0],[A,0]]: reads the one-hot upper half, writes hidden-graph
  // neighbors into the lower half. Column j of the upper half must map to
  // the out-neighbors of j.
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      if (a[static_cast<int64_t>(j) * n + i])
        c.W1[Construction::idx(n + i, j, d)] = 1.0;
  return c;
}

// Runs the loop. State column j is [e_j ; a_j]; one loop applies attention
// (score between query j and key k is beta * a_j[k]; value keeps the lower
// half), a residual, the FFN adding hidden-graph neighbors, and the
// threshold normalization 1{x > 0}.
//
// hard_max = true replaces softmax with exact uniform attention over keys
// with strictly positive score; an empty selection contributes nothing.
inline Adj run(const Construction& c, const Adj& a_ctx, int loops,
               bool hard_max = true) {
  check_binary(a_ctx, c.n, "run");
  if (loops < 1) throw num::UsageError("run: loops must be >= 1");
  int n = c.n;
  // state[j*n + i] = a_j[i]
  std::vector<double> state(static_cast<size_t>(n) * n);
  for (int64_t i = 0; i < static_cast<int64_t>(n) * n; ++i)
    state[i] = a_ctx[i] ? 1.0 : 0.0;
  std::vector<double> next(state.size());
  std::vector<double> weights(n);
  for (int loop = 0; loop < loops; ++loop) {
    for (int j = 0; j < n; ++j) {
      const double* aj = state.data() + static_cast<int64_t>(j) * n;
      // attention weights over keys k
      if (hard_max) {
        int cnt = 0;
        for (int k = 0; k < n; ++k) cnt += aj[k] > 0 ? 1 : 0;
        for (int k = 0; k < n; ++k)
          weights[k] = (cnt > 0 && aj[k] > 0) ? 1.0 / cnt : 0.0;
      } else {
        double mx = 0.0;
        for (int k = 0; k < n; ++k) mx = std::max(mx, c.beta * aj[k]);
        double z = 0.0;
        for (int k = 0; k < n; ++k) {
          weights[k] = std::exp(c.beta * aj[k] - mx);
          z += weights[k];
        }
        for (int k = 0; k < n; ++k) weights[k] /= z;
      }
      double* out = next.data() + static_cast<int64_t>(j) * n;
      for (int i = 0; i < n; ++i) {
        double attn = 0.0;
        for (int k = 0; k < n; ++k)
          attn += weights[k] * state[static_cast<int64_t>(k) * n + i];
        // residual + attention + FFN (hidden-graph out-neighbors of j)
        double val = aj[i] + attn +
                     (c.hidden[static_cast<int64_t>(j) * n + i] ? 1.0 : 0.0);
        out[i] = val > 0.0 ? 1.0 : 0.0;  // threshold normalization
      }
    }
    state.swap(next);
  }
  Adj out(static_cast<size_t>(n) * n);
  for (size_t i = 0; i < out.size(); ++i) out[i] = state[i] > 0 ? 1 : 0;
  return out;
}

// Ground truth: reachability by paths of length >= 1 on the union graph.
inline Adj bfs_oracle(const Adj& a, const Adj& a_ctx) {
  size_t sz = a.size();
  if (a_ctx.size() != sz) throw num::ShapeError("bfs_oracle: size mismatch");
  int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(sz))));
  check_binary(a, n, "bfs_oracle");
  check_binary(a_ctx, n, "bfs_oracle");
  Adj reach(sz, 0);
  for (int s = 0; s < n; ++s) {
    std::queue<int> q;
    std::vector<uint8_t> seen(n, 0);
    auto relax = [&](int u) {
      for (int v = 0; v < n; ++v) {
        if ((a[static_cast<int64_t>(u) * n + v] ||
             a_ctx[static_cast<int64_t>(u) * n + v]) &&
            !seen[v]) {
          seen[v] = 1;
          reach[static_cast<int64_t>(s) * n + v] = 1;
          q.push(v);
        }
      }
    };
    relax(s);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      relax(u);
    }
  }
  return reach;
}

// Longest finite shortest-path distance (>= 1) over ordered pairs in the
// union graph; 1 when no pair is reachable.
inline int diameter(const Adj& a, const Adj& a_ctx, int n) {
  int best = 1;
  for (int s = 0; s < n; ++s) {
    std::vector<int> dist(n, -1);
    std::queue<int> q;
    q.push(s);
    std::vector<int> d0(n, -1);
    d0[s] = 0;
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v = 0; v < n; ++v) {
        if ((a[static_cast<int64_t>(u) * n + v] ||
             a_ctx[static_cast<int64_t>(u) * n + v]) &&
            d0[v] < 0) {
          d0[v] = d0[u] + 1;
          if (v != s) best = std::max(best, d0[v]);
          q.push(v);
        }
      }
    }
  }
  return best;
}

inline int loops_needed(int diam) {
  int l = 1, reachspan = 1;
  while (reachspan < diam) {
    reachspan *= 2;
    ++l;
  }
  return l;  // ceil(log2 D) + 1
}

struct VerifyMismatch {
  int trial = 0;
  int n = 0;
  int s = 0, t = 0;
  int got = 0, expected = 0;
  Adj a, a_ctx;
};

struct VerifyReport {
  int trials = 0;
  int n_max = 0;
  std::vector<VerifyMismatch> mismatches;
  bool ok() const { return mismatches.empty(); }
};

inline VerifyReport verify(int n_max, int trials, uint64_t seed) {
  if (n_max > 16) throw num::UsageError("verify: n_max capped at 16");
  VerifyReport rep;
  rep.trials = trials;
  rep.n_max = n_max;
  Rng rng(seed, "reach.verify");
  const double densities[3] = {0.1, 0.3, 0.5};
  for (int trial = 0; trial < trials; ++trial) {
    int n = rng.next_int(2, n_max);
    double dens = densities[rng.next_below(3)];
    Adj a(static_cast<size_t>(n) * n, 0), a_ctx(a);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        if (i == j) continue;
        if (rng.next_double() < dens) a[static_cast<int64_t>(j) * n + i] = 1;
        if (rng.next_double() < dens) a_ctx[static_cast<int64_t>(j) * n + i] = 1;
      }
    }
    auto c = build(a, n);
    int loops = loops_needed(diameter(a, a_ctx, n));
    auto got = run(c, a_ctx, loops, true);
    auto want = bfs_oracle(a, a_ctx);
    for (int s = 0; s < n; ++s) {
      for (int t = 0; t < n; ++t) {
        if (s == t) continue;
        int64_t i = static_cast<int64_t>(s) * n + t;
        if (got[i] != want[i])
          rep.mismatches.push_back({trial, n, s, t, got[i], want[i], a, a_ctx});
      }
    }
  }
  return rep;
}

// Alternating-edge path of the given length: even edges in the hidden graph,
// odd edges in the context graph. Distance from 0 to `length` is exactly
// `length`, and no shortcut exists, so L-1 loops must miss the far pair.
struct PathInstance {
  int n = 0;
  Adj a, a_ctx;
};

inline PathInstance path_instance(int length) {
  PathInstance p;
  p.n = length + 1;
  p.a.assign(static_cast<size_t>(p.n) * p.n, 0);
  p.a_ctx = p.a;
  for (int e = 0; e < length; ++e) {
    auto& dst = (e % 2 == 0) ? p.a : p.a_ctx;
    dst[static_cast<int64_t>(e) * p.n + e + 1] = 1;
  }
  return p;
}

}  // namespace loop::reach
