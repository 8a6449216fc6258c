#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "loop/model.hpp"
#include "loop/rng.hpp"
#include "loop/tensor.hpp"

namespace loop::infer {

using model::ExitDistValues;
using model::LoopModel;

struct ExitPolicy {
  enum class Kind { kStatic, kHdiff, kQExit };
  Kind kind = Kind::kStatic;
  int static_t = 1;
  double epsilon = 0.0;   // hdiff threshold
  double q = 0.5;         // cumulative exit probability threshold
  int floor = 1;
  int ceiling = 0;        // 0 means T_max

  static ExitPolicy static_at(int t) {
    ExitPolicy p;
    p.kind = Kind::kStatic;
    p.static_t = t;
    return p;
  }
  static ExitPolicy hdiff(double eps) {
    ExitPolicy p;
    p.kind = Kind::kHdiff;
    p.epsilon = eps;
    return p;
  }
  static ExitPolicy qexit(double q) {
    ExitPolicy p;
    p.kind = Kind::kQExit;
    p.q = q;
    return p;
  }

  void validate(int t_max) const {
    if (kind == Kind::kStatic && (static_t < 1 || static_t > t_max))
      throw num::UsageError("static exit step out of range");
    if (kind == Kind::kHdiff && !(epsilon > 0))
      throw num::UsageError("hdiff epsilon must be positive");
    if (kind == Kind::kQExit && !(q >= 0.0 && q <= 1.0))
      throw num::UsageError("qexit q must lie in [0,1]");
    int ceil = ceiling == 0 ? t_max : ceiling;
    if (floor < 1 || ceil > t_max || floor > ceil)
      throw num::UsageError("exit floor/ceiling out of range");
  }
};

enum class KVPolicy { kFull, kFirstStep, kLastStep, kAveraged };

inline KVPolicy kv_policy_from_string(const std::string& s) {
  if (s == "full") return KVPolicy::kFull;
  if (s == "first_step") return KVPolicy::kFirstStep;
  if (s == "last_step") return KVPolicy::kLastStep;
  if (s == "averaged") return KVPolicy::kAveraged;
  throw num::UsageError("unknown kv policy: " + s);
}

inline ExitPolicy exit_policy_from_strings(const std::string& kind,
                                           double value) {
  if (kind == "static") return ExitPolicy::static_at(static_cast<int>(value));
  if (kind == "hdiff") return ExitPolicy::hdiff(value);
  if (kind == "qexit") return ExitPolicy::qexit(value);
  throw num::UsageError("unknown exit policy: " + kind);
}

// Exit step chosen from a complete per-step record: gate CDF for qexit,
// hidden-state deltas for hdiff. hdiffs[t-1] holds ||h_t - h_{t-1}|| /
// sqrt(d); entry 0 is unused.
inline int choose_exit(const ExitDistValues& dist,
                       const std::vector<double>& hdiffs,
                       const ExitPolicy& policy, int t_max) {
  policy.validate(t_max);
  int t_exit = t_max;
  switch (policy.kind) {
    case ExitPolicy::Kind::kStatic:
      t_exit = policy.static_t;
      break;
    case ExitPolicy::Kind::kQExit:
      for (int m = 1; m <= t_max; ++m) {
        if (dist.cdf(m) >= policy.q) {
          t_exit = m;
          break;
        }
      }
      break;
    case ExitPolicy::Kind::kHdiff:
      for (int t = 2; t <= t_max; ++t) {
        if (t - 1 < static_cast<int>(hdiffs.size()) &&
            hdiffs[t - 1] < policy.epsilon) {
          t_exit = t;
          break;
        }
      }
      break;
  }
  int ceil = policy.ceiling == 0 ? t_max : policy.ceiling;
  return std::clamp(t_exit, policy.floor, ceil);
}

struct Sampler {
  enum class Kind { kGreedy, kTopP };
  Kind kind = Kind::kGreedy;
  double temperature = 1.0;
  double top_p = 0.7;
};

struct DecodeConfig {
  int max_new_tokens = 32;
  Sampler sampler;
  uint64_t seed = 0;
  int context_limit = 512;
};

struct TokenRecord {
  int token_id = 0;
  int exit_step = 0;
  double cdf_at_exit = 0.0;
};

struct DecodeReport {
  std::vector<TokenRecord> tokens;
  double mean_exit_step = 0.0;
  int64_t peak_cache_entries = 0;
  std::vector<int> prompt_exit_steps;
};

// Plain-arithmetic single-sequence decoder with explicit per-layer KV caches.
// Prefill always runs every recurrent step; the KV policy governs what is
// kept and served to later decode steps.
template <class T>
class Decoder {
 public:
  Decoder(const LoopModel<T>& m, ExitPolicy exit_policy, KVPolicy kv_policy,
          bool store_cache = true)
      : m_(m),
        exit_(exit_policy),
        kv_(kv_policy),
        store_cache_(store_cache),
        d_(m.cfg.d_model),
        hd_(m.cfg.d_model / m.cfg.n_heads) {
    exit_.validate(m.cfg.t_max);
    layers_.resize(m.cfg.n_layers);
  }

  int64_t cache_entries() const {
    int64_t n = 0;
    for (const auto& l : layers_)
      for (const auto& p : l.pos) n += static_cast<int64_t>(p.k.size());
    return n;
  }
  int64_t peak_cache_entries() const { return peak_entries_; }

  // Runs one token through the loop. forced_t > 0 pins the exit step
  // (prefill and replay); otherwise the exit policy decides online.
  // Returns the exit step; fills logits at the exit step and the gate CDF.
  int process_token(int token, int position, int forced_t,
                    std::vector<T>* logits_out, double* cdf_out) {
    const auto& cfg = m_.cfg;
    int t_max = cfg.t_max;
    std::vector<T> h(d_);
    for (int j = 0; j < d_; ++j) h[j] = m_.emb.data()[token * d_ + j];

    // scratch per-step K/V for this position, per layer
    std::vector<std::vector<std::vector<T>>> ks(cfg.n_layers), vs(cfg.n_layers);
    std::vector<T> h_prev;
    double survival = 1.0;
    double cdf = 0.0;
    int t_exit = t_max;
    std::vector<T> logits;
    int ceil = exit_.ceiling == 0 ? t_max : exit_.ceiling;

    for (int t = 1; t <= t_max; ++t) {
      h_prev = h;
      for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& blk = m_.blocks[l];
        auto a_in = rmsnorm(h, blk.attn_norm_w.data());
        auto q = matvec(blk.wq.data(), a_in);
        auto k = matvec(blk.wk.data(), a_in);
        rope_inplace(q, position);
        rope_inplace(k, position);
        auto v = matvec(blk.wv.data(), a_in);
        auto attn = attend(l, t, q, k, v);
        auto o = matvec(blk.wo.data(), attn);
        for (int j = 0; j < d_; ++j) h[j] += o[j];
        auto f_in = rmsnorm(h, blk.ffn_norm_w.data());
        auto f = ffn(blk, f_in);
        for (int j = 0; j < d_; ++j) h[j] += f[j];
        ks[l].push_back(std::move(k));
        vs[l].push_back(std::move(v));
      }
      auto normed = rmsnorm(h, m_.final_norm_w.data());
      double gate_logit = static_cast<double>(m_.gate_b.data()[0]);
      for (int j = 0; j < d_; ++j)
        gate_logit += static_cast<double>(normed[j]) *
                      static_cast<double>(m_.gate_w.data()[j]);
      double lam = 1.0 / (1.0 + std::exp(-gate_logit));
      double hdiff = 0.0;
      if (t >= 2) {
        for (int j = 0; j < d_; ++j) {
          double dd = static_cast<double>(h[j]) - static_cast<double>(h_prev[j]);
          hdiff += dd * dd;
        }
        hdiff = std::sqrt(hdiff) / std::sqrt(static_cast<double>(d_));
      }
      if (t < t_max) survival *= (1.0 - lam);
      cdf = t < t_max ? 1.0 - survival : 1.0;

      bool stop;
      if (forced_t > 0) {
        stop = t == forced_t;
      } else if (t >= ceil) {
        stop = true;
      } else if (t < exit_.floor) {
        stop = false;
      } else {
        switch (exit_.kind) {
          case ExitPolicy::Kind::kStatic: stop = t >= exit_.static_t; break;
          case ExitPolicy::Kind::kQExit: stop = cdf >= exit_.q; break;
          case ExitPolicy::Kind::kHdiff: stop = t >= 2 && hdiff < exit_.epsilon; break;
        }
      }
      if (stop) {
        t_exit = t;
        if (logits_out) {
          logits.assign(cfg.vocab_size, T(0));
          for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
            T acc = 0;
            for (int j = 0; j < d_; ++j)
              acc += normed[j] * m_.lm_head.data()[vtok * d_ + j];
            logits[vtok] = acc;
          }
        }
        break;
      }
    }

    commit(ks, vs, t_exit);
    if (logits_out) *logits_out = std::move(logits);
    if (cdf_out) *cdf_out = cdf;
    return t_exit;
  }

  // Encodes the prompt at full depth with true per-step attention: loop step
  // t of each position attends to step-t K/V of earlier positions, exactly as
  // in the batch forward. The policy only governs which rows are committed
  // for the decode phase. Step-major, so reduced policies hold at most one
  // step's rows at a time and the committed cache stays 1/T_max of full.
  void prefill(const std::vector<int>& tokens, std::vector<T>* logits_out) {
    const auto& cfg = m_.cfg;
    int np = static_cast<int>(tokens.size());
    int t_max = cfg.t_max;
    int base = static_cast<int>(layers_[0].pos.size());
    std::vector<std::vector<T>> hs(np, std::vector<T>(d_));
    for (int p = 0; p < np; ++p)
      for (int j = 0; j < d_; ++j)
        hs[p][j] = m_.emb.data()[tokens[p] * d_ + j];
    std::vector<std::vector<PosCache>> keep(cfg.n_layers,
                                            std::vector<PosCache>(np));
    for (int t = 1; t <= t_max; ++t) {
      std::vector<std::vector<std::vector<T>>> cur_k(cfg.n_layers),
          cur_v(cfg.n_layers);
      for (int p = 0; p < np; ++p) {
        auto& h = hs[p];
        for (int l = 0; l < cfg.n_layers; ++l) {
          const auto& blk = m_.blocks[l];
          auto a_in = rmsnorm(h, blk.attn_norm_w.data());
          auto q = matvec(blk.wq.data(), a_in);
          auto k = matvec(blk.wk.data(), a_in);
          rope_inplace(q, base + p);
          rope_inplace(k, base + p);
          auto v = matvec(blk.wv.data(), a_in);
          std::vector<const std::vector<T>*> krows(p + 1), vrows(p + 1);
          for (int j = 0; j < p; ++j) {
            krows[j] = &cur_k[l][j];
            vrows[j] = &cur_v[l][j];
          }
          krows[p] = &k;
          vrows[p] = &v;
          auto attn = attn_core(krows, vrows, q);
          auto o = matvec(blk.wo.data(), attn);
          for (int j = 0; j < d_; ++j) h[j] += o[j];
          auto f_in = rmsnorm(h, blk.ffn_norm_w.data());
          auto f = ffn(blk, f_in);
          for (int j = 0; j < d_; ++j) h[j] += f[j];
          cur_k[l].push_back(std::move(k));
          cur_v[l].push_back(std::move(v));
        }
      }
      for (int l = 0; l < cfg.n_layers; ++l)
        for (int p = 0; p < np; ++p)
          fold_step(keep[l][p], cur_k[l][p], cur_v[l][p], t, t_max);
    }
    if (logits_out && np > 0) {
      auto normed = rmsnorm(hs[np - 1], m_.final_norm_w.data());
      logits_out->assign(cfg.vocab_size, T(0));
      for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
        T acc = 0;
        for (int j = 0; j < d_; ++j)
          acc += normed[j] * m_.lm_head.data()[vtok * d_ + j];
        (*logits_out)[vtok] = acc;
      }
    }
    if (!store_cache_) return;
    for (int l = 0; l < cfg.n_layers; ++l)
      for (int p = 0; p < np; ++p) {
        keep[l][p].exit_step = t_max;
        layers_[l].pos.push_back(std::move(keep[l][p]));
      }
    peak_entries_ = std::max(peak_entries_, cache_entries());
  }

 private:
  struct PosCache {
    std::vector<std::vector<T>> k, v;  // one entry per kept step
    int exit_step = 0;
  };
  struct LayerCache {
    std::vector<PosCache> pos;
  };

  std::vector<T> rmsnorm(const std::vector<T>& x, const std::vector<T>& w) const {
    T eps = T(1e-5);
    T ms = 0;
    for (int j = 0; j < d_; ++j) ms += x[j] * x[j];
    ms = ms / static_cast<T>(d_) + eps;
    T inv = T(1) / std::sqrt(ms);
    std::vector<T> out(d_);
    for (int j = 0; j < d_; ++j) out[j] = x[j] * inv * w[j];
    return out;
  }

  // y = x W for row-major W[d_in, d_out]; matches num::matmul on a 1-row input.
  std::vector<T> matvec(const std::vector<T>& w, const std::vector<T>& x) const {
    int d_in = static_cast<int>(x.size());
    int d_out = static_cast<int>(w.size()) / d_in;
    std::vector<T> y(d_out, T(0));
    for (int i = 0; i < d_in; ++i) {
      T xv = x[i];
      if (xv == T(0)) continue;
      const T* row = w.data() + static_cast<int64_t>(i) * d_out;
      for (int j = 0; j < d_out; ++j) y[j] += xv * row[j];
    }
    return y;
  }

  void rope_inplace(std::vector<T>& x, int pos) const {
    T base = static_cast<T>(m_.cfg.rope_base);
    for (int h = 0; h < m_.cfg.n_heads; ++h) {
      for (int i = 0; i < hd_ / 2; ++i) {
        T theta = static_cast<T>(pos) *
                  std::pow(base, -static_cast<T>(2 * i) / static_cast<T>(hd_));
        T c = std::cos(theta), s = std::sin(theta);
        T a = x[h * hd_ + 2 * i], b = x[h * hd_ + 2 * i + 1];
        x[h * hd_ + 2 * i] = a * c - b * s;
        x[h * hd_ + 2 * i + 1] = a * s + b * c;
      }
    }
  }

  std::vector<T> ffn(const model::BlockParams<T>& blk,
                     const std::vector<T>& x) const {
    auto g = matvec(blk.w_gate.data(), x);
    auto u = matvec(blk.w_up.data(), x);
    for (size_t i = 0; i < g.size(); ++i) {
      T xv = g[i];
      T s = xv >= T(0) ? T(1) / (T(1) + std::exp(-xv))
                       : std::exp(xv) / (T(1) + std::exp(xv));
      g[i] = xv * s * u[i];
    }
    return matvec(blk.w_down.data(), g);
  }

  // K/V served for a cached position at loop step t under the policy.
  const std::vector<T>& served(const PosCache& p, int t,
                               const std::vector<std::vector<T>>& rows) const {
    if (kv_ == KVPolicy::kFull) {
      int idx = std::min(t, p.exit_step) - 1;
      return rows[idx];
    }
    return rows[0];
  }

  std::vector<T> attn_core(const std::vector<const std::vector<T>*>& krows,
                           const std::vector<const std::vector<T>*>& vrows,
                           const std::vector<T>& q) const {
    int n_keys = static_cast<int>(krows.size());
    T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd_));
    std::vector<T> out(d_, T(0));
    std::vector<T> scores(n_keys);
    for (int h = 0; h < m_.cfg.n_heads; ++h) {
      int off = h * hd_;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < n_keys; ++j) {
        const std::vector<T>& krow = *krows[j];
        T acc = 0;
        for (int p = 0; p < hd_; ++p) acc += q[off + p] * krow[off + p];
        scores[j] = acc * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      T z = 0;
      for (int j = 0; j < n_keys; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      T invz = T(1) / z;
      for (int j = 0; j < n_keys; ++j) {
        T w = scores[j] * invz;
        const std::vector<T>& vrow = *vrows[j];
        for (int p = 0; p < hd_; ++p) out[off + p] += w * vrow[off + p];
      }
    }
    return out;
  }

  std::vector<T> attend(int l, int t, const std::vector<T>& q,
                        const std::vector<T>& self_k,
                        const std::vector<T>& self_v) const {
    const auto& cache = layers_[l].pos;
    int n_prev = static_cast<int>(cache.size());
    std::vector<const std::vector<T>*> krows(n_prev + 1), vrows(n_prev + 1);
    for (int j = 0; j < n_prev; ++j) {
      krows[j] = &served(cache[j], t, cache[j].k);
      vrows[j] = &served(cache[j], t, cache[j].v);
    }
    krows[n_prev] = &self_k;
    vrows[n_prev] = &self_v;
    return attn_core(krows, vrows, q);
  }

  // Collapse this position's per-step K/V per the policy and append to the
  // cache. `ks[l]`/`vs[l]` hold steps 1..t_exit.
  void commit(std::vector<std::vector<std::vector<T>>>& ks,
              std::vector<std::vector<std::vector<T>>>& vs, int t_exit) {
    if (!store_cache_) return;
    for (int l = 0; l < m_.cfg.n_layers; ++l) {
      PosCache p;
      p.exit_step = t_exit;
      switch (kv_) {
        case KVPolicy::kFull:
          p.k = std::move(ks[l]);
          p.v = std::move(vs[l]);
          break;
        case KVPolicy::kFirstStep:
          p.k = {std::move(ks[l].front())};
          p.v = {std::move(vs[l].front())};
          break;
        case KVPolicy::kLastStep:
          p.k = {std::move(ks[l].back())};
          p.v = {std::move(vs[l].back())};
          break;
        case KVPolicy::kAveraged: {
          std::vector<T> ak(d_, T(0)), av(d_, T(0));
          T inv = T(1) / static_cast<T>(ks[l].size());
          for (size_t s = 0; s < ks[l].size(); ++s)
            for (int j = 0; j < d_; ++j) {
              ak[j] += ks[l][s][j];
              av[j] += vs[l][s][j];
            }
          for (int j = 0; j < d_; ++j) {
            ak[j] *= inv;
            av[j] *= inv;
          }
          p.k = {std::move(ak)};
          p.v = {std::move(av)};
          break;
        }
      }
      layers_[l].pos.push_back(std::move(p));
    }
    peak_entries_ = std::max(peak_entries_, cache_entries());
  }

  // Accumulates one prefill step's K/V row into a position's kept rows.
  void fold_step(PosCache& p, std::vector<T>& k, std::vector<T>& v, int t,
                 int t_max) {
    switch (kv_) {
      case KVPolicy::kFull:
        p.k.push_back(std::move(k));
        p.v.push_back(std::move(v));
        break;
      case KVPolicy::kFirstStep:
        if (t == 1) {
          p.k = {std::move(k)};
          p.v = {std::move(v)};
        }
        break;
      case KVPolicy::kLastStep:
        p.k = {std::move(k)};
        p.v = {std::move(v)};
        break;
      case KVPolicy::kAveraged:
        if (t == 1) {
          p.k = {std::move(k)};
          p.v = {std::move(v)};
        } else {
          for (int j = 0; j < d_; ++j) {
            p.k[0][j] += k[j];
            p.v[0][j] += v[j];
          }
        }
        if (t == t_max) {
          T inv = T(1) / static_cast<T>(t_max);
          for (int j = 0; j < d_; ++j) {
            p.k[0][j] *= inv;
            p.v[0][j] *= inv;
          }
        }
        break;
    }
  }

  const LoopModel<T>& m_;
  ExitPolicy exit_;
  KVPolicy kv_;
  bool store_cache_;
  int d_, hd_;
  std::vector<LayerCache> layers_;
  int64_t peak_entries_ = 0;
};

template <class T>
int sample_token(const std::vector<T>& logits, const Sampler& s, Rng& rng) {
  int v = static_cast<int>(logits.size());
  if (s.kind == Sampler::Kind::kGreedy) {
    int best = 0;
    for (int i = 1; i < v; ++i)
      if (logits[i] > logits[best]) best = i;
    return best;
  }
  if (!(s.temperature > 0)) throw num::UsageError("temperature must be positive");
  if (!(s.top_p > 0 && s.top_p <= 1)) throw num::UsageError("top_p in (0,1]");
  std::vector<double> p(v);
  double mx = -1e300;
  for (int i = 0; i < v; ++i)
    mx = std::max(mx, static_cast<double>(logits[i]) / s.temperature);
  double z = 0;
  for (int i = 0; i < v; ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) / s.temperature - mx);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  std::vector<int> idx(v);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return p[a] != p[b] ? p[a] > p[b] : a < b;
  });
  double cum = 0;
  int keep = 0;
  for (; keep < v; ++keep) {
    cum += p[idx[keep]];
    if (cum >= s.top_p) {
      ++keep;
      break;
    }
  }
  double r = rng.next_double() * cum;
  double acc = 0;
  for (int i = 0; i < keep; ++i) {
    acc += p[idx[i]];
    if (r < acc) return idx[i];
  }
  return idx[keep - 1];
}

// Full decode session: prefill at full depth, then policy-driven generation.
// stop_token < 0 disables early stop.
template <class T>
DecodeReport decode(const LoopModel<T>& m, const std::vector<int>& prompt,
                    const ExitPolicy& exit_policy, KVPolicy kv_policy,
                    const DecodeConfig& cfg, int stop_token = -1) {
  if (prompt.empty()) throw num::UsageError("decode: prompt must be non-empty");
  if (static_cast<int>(prompt.size()) + cfg.max_new_tokens > cfg.context_limit)
    throw num::UsageError("decode: context limit exceeded");
  Decoder<T> dec(m, exit_policy, kv_policy);
  Rng rng(cfg.seed, "decode");
  DecodeReport rep;
  int pos = static_cast<int>(prompt.size());
  std::vector<T> logits;
  dec.prefill(prompt, &logits);
  rep.prompt_exit_steps.assign(prompt.size(), m.cfg.t_max);
  double exit_sum = 0;
  for (int n = 0; n < cfg.max_new_tokens; ++n) {
    int tok = sample_token(logits, cfg.sampler, rng);
    double cdf = 0;
    int e = dec.process_token(tok, pos++, 0, &logits, &cdf);
    rep.tokens.push_back({tok, e, cdf});
    exit_sum += e;
    if (tok == stop_token) break;
  }
  rep.mean_exit_step =
      rep.tokens.empty() ? 0.0 : exit_sum / static_cast<double>(rep.tokens.size());
  rep.peak_cache_entries = dec.peak_cache_entries();
  return rep;
}

// Cache-free reference: before each new token, every past token is replayed
// from scratch to its recorded exit depth. Identical arithmetic order makes
// this bitwise-comparable with the cached kv=full path.
template <class T>
DecodeReport decode_recompute(const LoopModel<T>& m, const std::vector<int>& prompt,
                              const ExitPolicy& exit_policy,
                              const DecodeConfig& cfg, int stop_token = -1) {
  if (prompt.empty()) throw num::UsageError("decode: prompt must be non-empty");
  Rng rng(cfg.seed, "decode");
  DecodeReport rep;
  std::vector<int> history = prompt;
  std::vector<int> exits(prompt.size(), m.cfg.t_max);
  std::vector<T> logits;
  {
    Decoder<T> dec(m, exit_policy, KVPolicy::kFull);
    for (size_t i = 0; i < history.size(); ++i)
      dec.process_token(history[i], static_cast<int>(i), m.cfg.t_max,
                        i + 1 == history.size() ? &logits : nullptr, nullptr);
  }
  double exit_sum = 0;
  for (int n = 0; n < cfg.max_new_tokens; ++n) {
    int tok = sample_token(logits, cfg.sampler, rng);
    // fresh decoder; replay history at recorded depths, then the new token
    Decoder<T> dec(m, exit_policy, KVPolicy::kFull);
    for (size_t i = 0; i < history.size(); ++i)
      dec.process_token(history[i], static_cast<int>(i), exits[i], nullptr,
                        nullptr);
    double cdf = 0;
    int e = dec.process_token(tok, static_cast<int>(history.size()), 0, &logits,
                              &cdf);
    history.push_back(tok);
    exits.push_back(e);
    rep.tokens.push_back({tok, e, cdf});
    exit_sum += e;
    if (tok == stop_token) break;
  }
  rep.mean_exit_step =
      rep.tokens.empty() ? 0.0 : exit_sum / static_cast<double>(rep.tokens.size());
  rep.peak_cache_entries = 0;
  return rep;
}

}  // namespace loop::infer
