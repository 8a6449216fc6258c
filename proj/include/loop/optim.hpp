#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "loop/tensor.hpp"

namespace loop::train {

using num::Tensor;

enum class LrSchedule { kConstant, kCosine };

struct OptimizerConfig {
  double lr = 3e-3;
  double lr_final = 3e-4;          // cosine floor
  LrSchedule schedule = LrSchedule::kConstant;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip_norm = 1.0;
  int steps = 1000;
  int batch_rows = 16;
};

inline double lr_at(const OptimizerConfig& cfg, int step) {
  if (cfg.schedule == LrSchedule::kConstant) return cfg.lr;
  double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 1.0;
  if (frac > 1.0) frac = 1.0;
  return cfg.lr_final +
         0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// AdamW with decoupled weight decay, bias correction, and a global gradient
// norm clip applied before the moment updates. State is keyed by parameter
// name so checkpoint-restored models resume deterministically.
template <class T>
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  int step_count() const { return t_; }

  // Applies one update to the given named parameters. Returns the pre-clip
  // global gradient norm. Throws on non-finite gradients.
  double step(std::vector<std::pair<std::string, Tensor<T>>>& params) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
      for (T g : p.grad()) {
        if (!std::isfinite(static_cast<double>(g)))
          throw num::UsageError("non-finite gradient in parameter " + name);
        sq += static_cast<double>(g) * static_cast<double>(g);
      }
    }
    double norm = std::sqrt(sq);
    double clip_scale =
        (cfg_.grad_clip_norm > 0.0 && norm > cfg_.grad_clip_norm)
            ? cfg_.grad_clip_norm / norm
            : 1.0;
    ++t_;
    double lr = lr_at(cfg_, t_ - 1);
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& [name, p] : params) {
      auto& st = state_[name];
      if (st.m.size() != static_cast<size_t>(p.size())) {
        st.m.assign(p.size(), 0.0);
        st.v.assign(p.size(), 0.0);
      }
      auto& w = p.data();
      auto& g = p.grad();
      for (int64_t i = 0; i < p.size(); ++i) {
        double gi = static_cast<double>(g[i]) * clip_scale;
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + cfg_.eps);
        // decoupled decay on the pre-update weights
        double wi = static_cast<double>(w[i]);
        wi -= lr * (upd + cfg_.weight_decay * wi);
        w[i] = static_cast<T>(wi);
      }
    }
    return norm;
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::unordered_map<std::string, Moments> state_;
  int t_ = 0;
};

}  // namespace loop::train
