#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "loop/model.hpp"
#include "loop/tensor.hpp"

namespace loop::train {

using model::ExitDistribution;
using model::StepTrace;
using num::Shape;
using num::Tensor;

enum class PriorKind { kUniform, kGeometric };

struct StageIConfig {
  double beta = 0.1;
  PriorKind prior = PriorKind::kUniform;
  double geometric_eta = 0.5;
};

struct StageIIConfig {
  double slope_k = 50.0;
  double threshold_gamma = 0.005;
};

// Prior over exit steps. Geometric mass eta*(1-eta)^(t-1) with the remainder
// assigned to the final step, mirroring the exit distribution itself.
inline std::vector<double> prior_masses(const StageIConfig& cfg, int t_max) {
  std::vector<double> pi(t_max);
  if (cfg.prior == PriorKind::kUniform) {
    for (auto& x : pi) x = 1.0 / t_max;
    return pi;
  }
  double eta = cfg.geometric_eta;
  if (!(eta > 0.0 && eta < 1.0))
    throw num::UsageError("geometric prior needs eta in (0,1)");
  double surv = 1.0;
  for (int t = 0; t < t_max; ++t) {
    if (t < t_max - 1) {
      pi[t] = eta * surv;
      surv *= 1.0 - eta;
    } else {
      pi[t] = surv;
    }
  }
  return pi;
}

// Per-row mean cross entropy of each step's logits; rows with no supervised
// position contribute zero.
template <class T>
std::vector<Tensor<T>> per_row_step_losses(const StepTrace<T>& trace,
                                           const std::vector<int>& targets) {
  std::vector<T> sup(targets.size());
  for (size_t i = 0; i < targets.size(); ++i)
    sup[i] = targets[i] == num::kIgnoreIndex ? T(0) : T(1);
  std::vector<Tensor<T>> out;
  for (const auto& sd : trace.steps) {
    auto per = num::cross_entropy_per_pos(sd.logits, targets);
    out.push_back(num::row_mean_masked(
        num::reshape(per, Shape{trace.rows, trace.len}), sup));
  }
  return out;
}

// Entropy of the exit distribution, one value per row, summed over steps:
// H(p) = -sum_t p_t ln p_t. Gate sigmoids keep every mass strictly positive.
template <class T>
Tensor<T> exit_entropy(const ExitDistribution<T>& dist) {
  Tensor<T> h;
  for (const auto& p : dist.masses) {
    auto term = num::neg(num::mul(p, num::log_guarded(p)));
    h = h.defined() ? num::add(h, term) : term;
  }
  return h;
}

// Expected task loss under the exit distribution minus beta times the exit
// entropy, averaged over rows: sum_t p_t L^(t) - beta H(p).
template <class T>
Tensor<T> stage1_loss(const StepTrace<T>& trace, const std::vector<int>& targets,
                      const ExitDistribution<T>& dist, const StageIConfig& cfg) {
  if (dist.masses.size() != trace.steps.size())
    throw num::UsageError("stage1_loss: trace/distribution step mismatch");
  auto losses = per_row_step_losses(trace, targets);
  Tensor<T> expected;
  for (size_t t = 0; t < losses.size(); ++t) {
    auto term = num::mul(dist.masses[t], losses[t]);
    expected = expected.defined() ? num::add(expected, term) : term;
  }
  auto out = num::mean(expected);
  if (cfg.beta != 0.0)
    out = num::sub(out, num::scale(num::mean(exit_entropy(dist)),
                                   static_cast<T>(cfg.beta)));
  return out;
}

// KL(p || pi) per row, averaged over rows. pi must be strictly positive.
template <class T>
Tensor<T> kl_to_prior(const ExitDistribution<T>& dist,
                      const std::vector<double>& pi) {
  if (pi.size() != dist.masses.size())
    throw num::UsageError("kl_to_prior: prior length mismatch");
  for (double x : pi)
    if (x <= 0.0) throw num::UsageError("kl_to_prior: prior mass must be positive");
  Tensor<T> kl;
  for (size_t t = 0; t < pi.size(); ++t) {
    const auto& p = dist.masses[t];
    auto term = num::mul(
        p, num::add_scalar(num::log_guarded(p), static_cast<T>(-std::log(pi[t]))));
    kl = kl.defined() ? num::add(kl, term) : term;
  }
  return num::mean(kl);
}

// Negative evidence bound: sum_t p_t L^(t) + beta KL(p || prior). With a
// uniform prior this equals stage1_loss + beta ln T_max.
template <class T>
Tensor<T> elbo_loss(const StepTrace<T>& trace, const std::vector<int>& targets,
                    const ExitDistribution<T>& dist, const StageIConfig& cfg) {
  auto losses = per_row_step_losses(trace, targets);
  Tensor<T> expected;
  for (size_t t = 0; t < losses.size(); ++t) {
    auto term = num::mul(dist.masses[t], losses[t]);
    expected = expected.defined() ? num::add(expected, term) : term;
  }
  auto out = num::mean(expected);
  if (cfg.beta != 0.0) {
    auto pi = prior_masses(cfg, static_cast<int>(dist.masses.size()));
    out = num::add(out, num::scale(kl_to_prior(dist, pi), static_cast<T>(cfg.beta)));
  }
  return out;
}

// Per-token improvement from taking one more loop: I^(t) = max(0, prev - cur).
// Inputs are detached per-token losses.
template <class T>
std::vector<T> improvement(const std::vector<T>& loss_prev,
                           const std::vector<T>& loss_cur) {
  if (loss_prev.size() != loss_cur.size())
    throw num::UsageError("improvement: length mismatch");
  std::vector<T> out(loss_cur.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(T(0), loss_prev[i] - loss_cur[i]);
  return out;
}

// Ideal continuation probability w = sigmoid(k (I - gamma)).
template <class T>
std::vector<T> continuation_label(const std::vector<T>& improve,
                                  const StageIIConfig& cfg) {
  std::vector<T> w(improve.size());
  for (size_t i = 0; i < w.size(); ++i) {
    T x = static_cast<T>(cfg.slope_k) *
          (improve[i] - static_cast<T>(cfg.threshold_gamma));
    w[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                     : std::exp(x) / (T(1) + std::exp(x));
  }
  return w;
}

// BCE between the gate's continuation probability (1 - lambda) and the label
// w, averaged over masked positions:
//   -[ w ln(1-lambda) + (1-w) ln(lambda) ]
template <class T>
Tensor<T> stage2_step_bce(const Tensor<T>& lambda_tok, const std::vector<T>& w,
                          const std::vector<T>& mask) {
  int64_t n = lambda_tok.size();
  if (static_cast<int64_t>(w.size()) != n ||
      static_cast<int64_t>(mask.size()) != n)
    throw num::UsageError("stage2_step_bce: length mismatch");
  auto lam = num::clamp(lambda_tok, static_cast<T>(1e-7), static_cast<T>(1 - 1e-7));
  auto flat = num::reshape(lam, Shape{static_cast<int>(n)});
  Tensor<T> wt(Shape{static_cast<int>(n)}, w);
  Tensor<T> one_minus_w(Shape{static_cast<int>(n)}, [&] {
    std::vector<T> v(w.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = T(1) - w[i];
    return v;
  }());
  auto one = Tensor<T>::full(Shape{static_cast<int>(n)}, T(1));
  auto bce = num::neg(
      num::add(num::mul(wt, num::log_guarded(num::sub(one, flat))),
               num::mul(one_minus_w, num::log_guarded(flat))));
  auto row = num::row_mean_masked(num::reshape(bce, Shape{1, static_cast<int>(n)}),
                                  mask);
  return num::reshape(row, Shape{1});
}

// Adaptive gate objective: mean over steps t = 2..T_max of the per-step BCE,
// divided by T_max.
template <class T>
Tensor<T> stage2_adaptive_loss(const std::vector<Tensor<T>>& lambda_per_step,
                               const std::vector<std::vector<T>>& labels,
                               const std::vector<T>& mask, int t_max) {
  if (static_cast<int>(lambda_per_step.size()) != t_max)
    throw num::UsageError("stage2_adaptive_loss: need lambdas for all steps");
  if (static_cast<int>(labels.size()) != t_max)
    throw num::UsageError("stage2_adaptive_loss: need labels for all steps");
  if (t_max < 2) throw num::UsageError("stage2_adaptive_loss: T_max must be >= 2");
  Tensor<T> total;
  for (int t = 2; t <= t_max; ++t) {
    auto term = stage2_step_bce(lambda_per_step[t - 1], labels[t - 1], mask);
    total = total.defined() ? num::add(total, term) : term;
  }
  return num::scale(total, T(1) / static_cast<T>(t_max));
}

// Detached per-token cross entropy for each step of a trace.
template <class T>
std::vector<std::vector<T>> detached_per_token_losses(
    const StepTrace<T>& trace, const std::vector<int>& targets) {
  num::NoGradGuard ng;
  std::vector<std::vector<T>> out;
  for (const auto& sd : trace.steps) {
    auto logits = num::detach(sd.logits);
    out.push_back(num::cross_entropy_per_pos(logits, targets).data());
  }
  return out;
}

}  // namespace loop::train
