#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "loop/rng.hpp"
#include "loop/tensor.hpp"

namespace loop::model {

using num::Shape;
using num::Tensor;

// Additive pre-softmax mask value for disallowed attention edges. A large
// finite constant rather than -inf keeps gradients finite.
inline constexpr double kMaskValue = -1e9;

enum class GatePooling { kMean, kLastToken, kPerToken };

inline GatePooling gate_pooling_from_string(const std::string& s) {
  if (s == "mean") return GatePooling::kMean;
  if (s == "last_token") return GatePooling::kLastToken;
  if (s == "per_token") return GatePooling::kPerToken;
  throw num::UsageError("unknown gate_pooling: " + s);
}

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_hidden = 128;
  int t_max = 4;
  double rope_base = 10000.0;
  std::string dtype = "float32";       // float32 | float64
  GatePooling gate_pooling = GatePooling::kMean;
  bool tie_lm_head = false;            // share embedding with the LM head
  bool gate_detach = false;            // stop-gradient into the gate input

  void validate() const {
    if (vocab_size <= 0) throw num::UsageError("vocab_size must be positive");
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_hidden <= 0)
      throw num::UsageError("model dims must be positive");
    if (d_model % n_heads != 0)
      throw num::UsageError("d_model must be divisible by n_heads");
    if ((d_model / n_heads) % 2 != 0)
      throw num::UsageError("head dim must be even for rotary embeddings");
    if (t_max < 1) throw num::UsageError("t_max must be >= 1");
    if (rope_base <= 0) throw num::UsageError("rope_base must be positive");
    if (dtype != "float32" && dtype != "float64")
      throw num::UsageError("dtype must be float32 or float64");
  }
};

template <class T>
struct BlockParams {
  Tensor<T> attn_norm_w;          // [d]
  Tensor<T> wq, wk, wv, wo;       // [d, d]
  Tensor<T> ffn_norm_w;           // [d]
  Tensor<T> w_gate, w_up;         // [d, f]
  Tensor<T> w_down;               // [f, d]
};

// Shared-weight block stack + embedding + LM head + exit gate. The same
// BlockParams are applied at every recurrent step; weight tying is structural.
template <class T>
struct LoopModel {
  ModelConfig cfg;
  Tensor<T> emb;                   // [vocab, d]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> final_norm_w;          // [d]
  Tensor<T> lm_head;               // [vocab, d]; same node as emb when tied
  Tensor<T> gate_w;                // [d, 1]
  Tensor<T> gate_b;                // [1]

  static LoopModel init(const ModelConfig& cfg, Rng rng) {
    cfg.validate();
    LoopModel m;
    m.cfg = cfg;
    int d = cfg.d_model, f = cfg.ffn_hidden, v = cfg.vocab_size;
    T std_in = T(0.02);
    // residual-output projections scaled down with depth
    T std_out = T(0.02 / std::sqrt(2.0 * cfg.n_layers));
    auto r = [&](const char* name) { return rng.stream(name); };
    auto rn = [&](Shape s, Rng rr, T sd) {
      return Tensor<T>::randn(s, rr, sd, true);
    };
    m.emb = rn({v, d}, r("emb"), std_in);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string p = "block" + std::to_string(l) + ".";
      BlockParams<T> b;
      b.attn_norm_w = Tensor<T>::full({d}, T(1), true);
      b.wq = rn({d, d}, rng.stream(p + "wq"), std_in);
      b.wk = rn({d, d}, rng.stream(p + "wk"), std_in);
      b.wv = rn({d, d}, rng.stream(p + "wv"), std_in);
      b.wo = rn({d, d}, rng.stream(p + "wo"), std_out);
      b.ffn_norm_w = Tensor<T>::full({d}, T(1), true);
      b.w_gate = rn({d, f}, rng.stream(p + "w_gate"), std_in);
      b.w_up = rn({d, f}, rng.stream(p + "w_up"), std_in);
      b.w_down = rn({f, d}, rng.stream(p + "w_down"), std_out);
      m.blocks.push_back(std::move(b));
    }
    m.final_norm_w = Tensor<T>::full({d}, T(1), true);
    m.lm_head = cfg.tie_lm_head ? m.emb : rn({v, d}, r("lm_head"), std_in);
    m.gate_w = rn({d, 1}, r("gate_w"), std_in);
    m.gate_b = Tensor<T>::zeros({1}, true);
    return m;
  }

  // Visits every parameter tensor with a stable name. Gate parameters carry
  // the "gate." prefix so Stage II can select them.
  void for_each_param(
      const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("emb", emb);
    for (size_t l = 0; l < blocks.size(); ++l) {
      std::string p = "block" + std::to_string(l) + ".";
      auto& b = blocks[l];
      fn(p + "attn_norm_w", b.attn_norm_w);
      fn(p + "wq", b.wq);
      fn(p + "wk", b.wk);
      fn(p + "wv", b.wv);
      fn(p + "wo", b.wo);
      fn(p + "ffn_norm_w", b.ffn_norm_w);
      fn(p + "w_gate", b.w_gate);
      fn(p + "w_up", b.w_up);
      fn(p + "w_down", b.w_down);
    }
    fn("final_norm_w", final_norm_w);
    if (!cfg.tie_lm_head) fn("lm_head", lm_head);
    fn("gate.w", gate_w);
    fn("gate.b", gate_b);
  }

  int64_t param_count() {
    int64_t n = 0;
    for_each_param([&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
  }
};

// A packed batch: `rows` sequences of length `len`, possibly holding several
// task samples each, separated by segment ids. Positions restart per segment.
struct Batch {
  int rows = 0;
  int len = 0;
  std::vector<int> tokens;    // rows*len; 0 at padding
  std::vector<int> segments;  // rows*len; -1 marks padding
  std::vector<int> positions; // rows*len; within-segment position
  std::vector<int> targets;   // rows*len; num::kIgnoreIndex where unsupervised

  int64_t total() const { return static_cast<int64_t>(rows) * len; }

  static Batch single(const std::vector<int>& toks) {
    Batch b;
    b.rows = 1;
    b.len = static_cast<int>(toks.size());
    b.tokens = toks;
    b.segments.assign(b.len, 0);
    b.positions.resize(b.len);
    for (int i = 0; i < b.len; ++i) b.positions[i] = i;
    b.targets.assign(b.len, num::kIgnoreIndex);
    for (int i = 0; i + 1 < b.len; ++i) b.targets[i] = toks[i + 1];
    return b;
  }
};

template <class T>
struct StepData {
  Tensor<T> hidden;        // [rows*len, d] pre-final-norm state after this loop
  Tensor<T> normed;        // [rows*len, d] post final norm
  Tensor<T> logits;        // [rows*len, vocab]
  Tensor<T> lambda_tok;    // [rows*len] per-token exit probability
  Tensor<T> lambda_row;    // [rows] pooled per-sequence exit probability
};

template <class T>
struct StepTrace {
  int rows = 0;
  int len = 0;
  std::vector<StepData<T>> steps;  // one per recurrent step, 1..T
  std::vector<T> token_mask;       // rows*len; 1 at non-pad positions
};

namespace detail {

// Additive mask: position i may attend to j iff j <= i, same segment, and
// neither is padding (padding attends only to itself so softmax stays finite).
template <class T>
Tensor<T> build_attention_mask(const Batch& b, int n_heads) {
  int r = b.rows, m = b.len;
  std::vector<T> mask(static_cast<size_t>(r) * n_heads * m * m);
  for (int row = 0; row < r; ++row) {
    for (int i = 0; i < m; ++i) {
      int seg_i = b.segments[row * m + i];
      for (int j = 0; j < m; ++j) {
        bool ok = (j == i) ||
                  (j < i && seg_i >= 0 && b.segments[row * m + j] == seg_i);
        T val = ok ? T(0) : static_cast<T>(kMaskValue);
        for (int h = 0; h < n_heads; ++h) {
          mask[((static_cast<int64_t>(row) * n_heads + h) * m + i) * m + j] = val;
        }
      }
    }
  }
  return Tensor<T>(Shape{r, n_heads, m, m}, std::move(mask), false);
}

}  // namespace detail

// One application of the shared block stack (the M^L of the loop).
template <class T>
Tensor<T> apply_block_stack(const LoopModel<T>& model, const Tensor<T>& h_in,
                            const Batch& b, const Tensor<T>& mask) {
  const auto& cfg = model.cfg;
  T eps = T(1e-5);
  Tensor<T> h = h_in;
  for (const auto& blk : model.blocks) {
    auto a_in = num::rms_norm(h, blk.attn_norm_w, eps);
    auto q = num::rope_apply(num::matmul(a_in, blk.wq), b.positions,
                             static_cast<T>(cfg.rope_base), cfg.n_heads);
    auto k = num::rope_apply(num::matmul(a_in, blk.wk), b.positions,
                             static_cast<T>(cfg.rope_base), cfg.n_heads);
    auto v = num::matmul(a_in, blk.wv);
    auto scores = num::add(num::attention_scores(q, k, b.rows, cfg.n_heads), mask);
    auto probs = num::softmax(scores, -1);
    auto attn = num::attention_mix(probs, v);
    h = num::add(h, num::matmul(attn, blk.wo));
    auto f_in = num::rms_norm(h, blk.ffn_norm_w, eps);
    h = num::add(h, num::swiglu(f_in, blk.w_gate, blk.w_up, blk.w_down));
  }
  return h;
}

// Runs the loop T times. h^(0) = emb(tokens); h^(t) = M^L(h^(t-1)).
// Per step: logits from lm_head over the final norm, per-token gate lambda,
// and a pooled per-sequence lambda according to cfg.gate_pooling.
template <class T>
StepTrace<T> forward_looped(const LoopModel<T>& model, const Batch& b, int t_steps) {
  const auto& cfg = model.cfg;
  if (t_steps < 1 || t_steps > cfg.t_max)
    throw num::UsageError("forward_looped: T=" + std::to_string(t_steps) +
                          " outside [1," + std::to_string(cfg.t_max) + "]");
  StepTrace<T> trace;
  trace.rows = b.rows;
  trace.len = b.len;
  trace.token_mask.resize(b.total());
  for (int64_t i = 0; i < b.total(); ++i)
    trace.token_mask[i] = b.segments[i] >= 0 ? T(1) : T(0);

  auto mask = detail::build_attention_mask<T>(b, cfg.n_heads);
  Tensor<T> h = num::embedding(model.emb, b.tokens);
  T eps = T(1e-5);
  for (int t = 1; t <= t_steps; ++t) {
    h = apply_block_stack(model, h, b, mask);
    StepData<T> sd;
    sd.hidden = h;
    sd.normed = num::rms_norm(h, model.final_norm_w, eps);
    sd.logits = num::matmul_transposed(sd.normed, model.lm_head);
    auto gate_in = cfg.gate_detach ? num::detach(sd.normed) : sd.normed;
    auto gate_logit =
        num::add_rowvec(num::matmul(gate_in, model.gate_w), model.gate_b);
    sd.lambda_tok = num::reshape(num::sigmoid(gate_logit), Shape{b.rows * b.len});
    switch (cfg.gate_pooling) {
      case GatePooling::kMean:
        sd.lambda_row = num::row_mean_masked(
            num::reshape(sd.lambda_tok, Shape{b.rows, b.len}), trace.token_mask);
        break;
      case GatePooling::kLastToken: {
        // mask selecting the last non-pad position of each row
        std::vector<T> last(b.total(), T(0));
        for (int r = 0; r < b.rows; ++r) {
          for (int i = b.len - 1; i >= 0; --i) {
            if (b.segments[r * b.len + i] >= 0) {
              last[r * b.len + i] = T(1);
              break;
            }
          }
        }
        sd.lambda_row = num::row_mean_masked(
            num::reshape(sd.lambda_tok, Shape{b.rows, b.len}), last);
        break;
      }
      case GatePooling::kPerToken:
        sd.lambda_row = sd.lambda_tok;  // exposed as-is; callers handle shape
        break;
    }
    trace.steps.push_back(std::move(sd));
  }
  return trace;
}

// Cross-entropy of step t's logits against the batch targets (mean over
// supervised positions).
template <class T>
Tensor<T> step_loss(const StepTrace<T>& trace, const std::vector<int>& targets,
                    int t) {
  if (t < 1 || t > static_cast<int>(trace.steps.size()))
    throw num::UsageError("step_loss: t out of range");
  if (static_cast<int64_t>(targets.size()) !=
      static_cast<int64_t>(trace.rows) * trace.len)
    throw num::ShapeError("step_loss: targets length mismatch");
  return num::cross_entropy(trace.steps[t - 1].logits, targets);
}

// ---------------------------------------------------------------------------
// exit distribution
// ---------------------------------------------------------------------------

// Differentiable exit distribution built from per-step lambda tensors (all the
// same shape): p_t = lambda_t * S_{t-1} for t < T, remainder mass at T.
template <class T>
struct ExitDistribution {
  std::vector<Tensor<T>> lambdas;    // T entries
  std::vector<Tensor<T>> survivals;  // S_0..S_{T-1} (T entries, S_0 = 1)
  std::vector<Tensor<T>> masses;     // p_1..p_T
};

template <class T>
ExitDistribution<T> exit_distribution(const std::vector<Tensor<T>>& lambdas) {
  if (lambdas.empty()) throw num::UsageError("exit_distribution: no lambdas");
  for (const auto& l : lambdas)
    for (T x : l.data())
      if (!(x > T(0) && x < T(1)))
        throw num::UsageError("exit_distribution: lambda outside (0,1)");
  ExitDistribution<T> d;
  d.lambdas = lambdas;
  int t_max = static_cast<int>(lambdas.size());
  Tensor<T> surv = Tensor<T>::full(lambdas[0].shape(), T(1));
  d.survivals.push_back(surv);  // S_0
  for (int t = 0; t < t_max; ++t) {
    if (t < t_max - 1) {
      d.masses.push_back(num::mul(lambdas[t], surv));
      auto one = Tensor<T>::full(lambdas[t].shape(), T(1));
      surv = num::mul(surv, num::sub(one, lambdas[t]));
      d.survivals.push_back(surv);
    } else {
      d.masses.push_back(surv);  // remainder mass at T_max
    }
  }
  return d;
}

// Plain-arithmetic counterpart used on the inference path.
struct ExitDistValues {
  std::vector<double> lambdas;
  std::vector<double> survivals;  // S_0..S_{T-1}
  std::vector<double> masses;

  static ExitDistValues from_lambdas(const std::vector<double>& ls) {
    ExitDistValues d;
    d.lambdas = ls;
    int t_max = static_cast<int>(ls.size());
    double surv = 1.0;
    d.survivals.push_back(surv);
    for (int t = 0; t < t_max; ++t) {
      if (t < t_max - 1) {
        d.masses.push_back(ls[t] * surv);
        surv *= 1.0 - ls[t];
        d.survivals.push_back(surv);
      } else {
        d.masses.push_back(surv);
      }
    }
    return d;
  }

  // CDF(n) = 1 - S_n for n < T_max; exactly 1 at T_max.
  double cdf(int n) const {
    int t_max = static_cast<int>(masses.size());
    if (n < 1 || n > t_max) throw num::UsageError("cdf: n out of range");
    if (n == t_max) return 1.0;
    return 1.0 - survivals[n];
  }
};

}  // namespace loop::model
