#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "loop/losses.hpp"
#include "loop/model.hpp"
#include "loop/optim.hpp"
#include "loop/rng.hpp"
#include "loop/tasks.hpp"
#include "loop/tensor.hpp"

namespace loop::train {

struct TrainLoopConfig {
  int steps = 100;
  int batch_rows = 8;
  int row_len = 32;
  uint64_t seed = 0;
};

struct MetricsRow {
  int step = 0;
  int stage = 1;
  double total_loss = 0;
  std::vector<double> loss_t;  // per-step mean supervised CE, length T_max
  double entropy = 0;
  double mean_exit_step = 0;
  double lr = 0;
  double grad_norm = 0;
};

inline std::string metrics_header(int t_max) {
  std::ostringstream ss;
  ss << "step,stage,total_loss";
  for (int t = 1; t <= t_max; ++t) ss << ",loss_t" << t;
  ss << ",entropy,mean_exit_step,lr,grad_norm";
  return ss.str();
}

inline std::string metrics_line(const MetricsRow& r) {
  std::ostringstream ss;
  ss.precision(10);
  ss << r.step << ',' << r.stage << ',' << r.total_loss;
  for (double l : r.loss_t) ss << ',' << l;
  ss << ',' << r.entropy << ',' << r.mean_exit_step << ',' << r.lr << ','
     << r.grad_norm;
  return ss.str();
}

// Deterministic batch stream: shuffles record order per epoch from a named
// RNG stream and greedily packs records into fixed rows. A record that would
// overflow the current batch is deferred to the next one.
class Batcher {
 public:
  Batcher(const std::vector<tasks::Record>& recs, int rows, int row_len,
          uint64_t seed)
      : recs_(&recs), rows_(rows), row_len_(row_len),
        rng_(seed, "train.batches") {
    if (recs.empty()) throw num::UsageError("batcher: empty dataset");
    if (rows < 1 || row_len < 1) throw num::UsageError("batcher: bad shape");
    for (const auto& r : recs)
      if (static_cast<int>(r.tokens.size()) > row_len)
        throw num::UsageError("batcher: record longer than row");
    order_.resize(recs.size());
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
  }

  model::Batch next() {
    std::vector<const tasks::Record*> chosen;
    int row = 0, col = 0;
    while (row < rows_) {
      const tasks::Record& r = (*recs_)[order_[pos_]];
      int n = static_cast<int>(r.tokens.size());
      if (col + n > row_len_) {
        ++row;
        col = 0;
        continue;
      }
      chosen.push_back(&r);
      col += n;
      advance();
    }
    return tasks::pack_records(chosen, rows_, row_len_);
  }

  void skip(int batches) {
    for (int i = 0; i < batches; ++i) (void)next();
  }

 private:
  void advance() {
    if (++pos_ >= order_.size()) {
      pos_ = 0;
      rng_.shuffle(order_);
    }
  }

  const std::vector<tasks::Record>* recs_;
  int rows_, row_len_;
  Rng rng_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
};

namespace detail {

// Per-step mean CE over supervised positions plus exit statistics, all from
// detached values.
template <class T>
void fill_metrics(const model::StepTrace<T>& trace, const model::Batch& b,
                  MetricsRow& row) {
  auto per = detached_per_token_losses(trace, b.targets);
  int64_t n_sup = 0;
  for (int t : b.targets) n_sup += t != num::kIgnoreIndex ? 1 : 0;
  row.loss_t.clear();
  for (const auto& step : per) {
    double s = 0;
    for (int64_t i = 0; i < b.total(); ++i)
      if (b.targets[i] != num::kIgnoreIndex) s += static_cast<double>(step[i]);
    row.loss_t.push_back(n_sup > 0 ? s / n_sup : 0.0);
  }
  int t_max = static_cast<int>(trace.steps.size());
  double ent = 0, mexit = 0;
  for (int r = 0; r < b.rows; ++r) {
    std::vector<double> lam(t_max);
    for (int t = 0; t < t_max; ++t)
      lam[t] = static_cast<double>(trace.steps[t].lambda_row.data()[r]);
    auto d = model::ExitDistValues::from_lambdas(lam);
    for (int t = 0; t < t_max; ++t) {
      double p = d.masses[t];
      ent -= p > 0 ? p * std::log(p) : 0.0;
      mexit += (t + 1) * p;
    }
  }
  row.entropy = ent / b.rows;
  row.mean_exit_step = mexit / b.rows;
}

}  // namespace detail

// Joint LM + gate training on the expected loss minus entropy objective.
// Returns one metrics row per step; `on_step` (optional) sees each row as it
// is produced. Throws num::UsageError on non-finite loss or gradients.
template <class T>
std::vector<MetricsRow> train_stage1(
    model::LoopModel<T>& m, const std::vector<tasks::Record>& data,
    const StageIConfig& scfg, const OptimizerConfig& ocfg,
    const TrainLoopConfig& lcfg,
    const std::function<void(const MetricsRow&)>& on_step = {},
    int start_step = 0) {
  Batcher batcher(data, lcfg.batch_rows, lcfg.row_len, lcfg.seed);
  batcher.skip(start_step);
  AdamW<T> opt(ocfg);
  std::vector<std::pair<std::string, num::Tensor<T>>> params;
  m.for_each_param([&](const std::string& name, num::Tensor<T>& p) {
    params.emplace_back(name, p);
  });
  std::vector<MetricsRow> out;
  for (int step = start_step; step < lcfg.steps; ++step) {
    auto b = batcher.next();
    for (auto& [name, p] : params) p.zero_grad();
    auto trace = model::forward_looped(m, b, m.cfg.t_max);
    std::vector<num::Tensor<T>> lam;
    for (auto& sd : trace.steps) lam.push_back(sd.lambda_row);
    auto dist = model::exit_distribution(lam);
    auto loss = stage1_loss(trace, b.targets, dist, scfg);
    double total = static_cast<double>(loss.data()[0]);
    if (!std::isfinite(total))
      throw num::UsageError("stage1: non-finite loss at step " +
                            std::to_string(step));
    num::backward(loss);
    MetricsRow row;
    row.step = step;
    row.stage = 1;
    row.total_loss = total;
    detail::fill_metrics(trace, b, row);
    row.grad_norm = opt.step(params);
    row.lr = lr_at(ocfg, step);
    if (on_step) on_step(row);
    out.push_back(std::move(row));
  }
  return out;
}

// Gate-only fine-tuning: labels come from detached per-step loss
// improvements; only parameters under "gate." receive optimizer updates, so
// every other tensor stays bit-identical.
template <class T>
std::vector<MetricsRow> train_stage2(
    model::LoopModel<T>& m, const std::vector<tasks::Record>& data,
    const StageIIConfig& scfg, const OptimizerConfig& ocfg,
    const TrainLoopConfig& lcfg,
    const std::function<void(const MetricsRow&)>& on_step = {}) {
  if (m.cfg.t_max < 2)
    throw num::UsageError("stage2 needs T_max >= 2");
  Batcher batcher(data, lcfg.batch_rows, lcfg.row_len, lcfg.seed);
  AdamW<T> opt(ocfg);
  std::vector<std::pair<std::string, num::Tensor<T>>> gate_params, all_params;
  m.for_each_param([&](const std::string& name, num::Tensor<T>& p) {
    all_params.emplace_back(name, p);
    if (name.rfind("gate.", 0) == 0) gate_params.emplace_back(name, p);
  });
  int t_max = m.cfg.t_max;
  std::vector<MetricsRow> out;
  for (int step = 0; step < lcfg.steps; ++step) {
    auto b = batcher.next();
    for (auto& [name, p] : all_params) p.zero_grad();
    auto trace = model::forward_looped(m, b, t_max);
    auto per = detached_per_token_losses(trace, b.targets);
    std::vector<T> mask(b.total());
    for (int64_t i = 0; i < b.total(); ++i)
      mask[i] = b.targets[i] != num::kIgnoreIndex ? T(1) : T(0);
    std::vector<std::vector<T>> labels(t_max);
    for (int t = 2; t <= t_max; ++t) {
      auto improve = improvement(per[t - 2], per[t - 1]);
      labels[t - 1] = continuation_label(improve, scfg);
    }
    labels[0].assign(b.total(), T(0));  // step 1 carries no BCE term
    std::vector<num::Tensor<T>> lam;
    for (auto& sd : trace.steps) lam.push_back(sd.lambda_tok);
    auto loss = stage2_adaptive_loss(lam, labels, mask, t_max);
    double total = static_cast<double>(loss.data()[0]);
    if (!std::isfinite(total))
      throw num::UsageError("stage2: non-finite loss at step " +
                            std::to_string(step));
    num::backward(loss);
    MetricsRow row;
    row.step = step;
    row.stage = 2;
    row.total_loss = total;
    detail::fill_metrics(trace, b, row);
    row.grad_norm = opt.step(gate_params);
    row.lr = lr_at(ocfg, step);
    if (on_step) on_step(row);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace loop::train
