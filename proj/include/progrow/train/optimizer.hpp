#pragma once

#include <cmath>
#include <json.hpp>
#include <numbers>
#include <unordered_map>

#include "progrow/nn/module.hpp"

namespace progrow {

struct OptimizerConfig {
  std::string kind = "sgd";  // sgd | adamw
  double lr = 0.05;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  bool nesterov = false;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::string lr_schedule = "cosine";  // constant | cosine, restarted at every stage
  double warmup_fraction = 0.0;        // linear warmup over this fraction of a stage's steps
  double grad_clip = 0.0;              // global L2 norm clip, 0 = off

  void validate() const {
    if (kind != "sgd" && kind != "adamw") throw std::invalid_argument("optimizer.kind must be sgd or adamw, got '" + kind + "'");
    if (lr < 0) throw std::invalid_argument("optimizer.lr must be >= 0");
    if (weight_decay < 0) throw std::invalid_argument("optimizer.weight_decay must be >= 0");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
      throw std::invalid_argument("optimizer.lr_schedule must be constant or cosine, got '" + lr_schedule + "'");
    if (warmup_fraction < 0 || warmup_fraction >= 1) throw std::invalid_argument("optimizer.warmup_fraction must be in [0,1)");
  }

  // Learning rate at step `step` of a stage lasting `total` steps.
  double lr_at(std::size_t step, std::size_t total) const {
    if (total == 0) return lr;
    const double t = static_cast<double>(step), n = static_cast<double>(total);
    const double warm = std::floor(warmup_fraction * n);
    if (warm > 0 && t < warm) return lr * (t + 1) / warm;
    if (lr_schedule == "constant") return lr;
    const double progress = (t - warm) / std::max(1.0, n - warm);
    return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(OptimizerConfig, kind, lr, weight_decay, momentum, nesterov, beta1, beta2, eps, lr_schedule,
                                   warmup_fraction, grad_clip)

// SGD with momentum (L2 decay) or AdamW (decoupled decay). Weight decay is
// applied to tensors of rank >= 2 only, leaving biases, normalization
// parameters and embeddings' 1-D tensors undecayed. State is keyed by
// parameter name; reset() drops it.
template <class T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  void reset() {
    state_.clear();
    steps_ = 0;
  }

  void step(const std::vector<nn::ParamRef<T>>& params, double lr) {
    ++steps_;
    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0) {
      double sq = 0;
      for (const auto& p : params)
        for (auto g : p.grad->vec()) sq += static_cast<double>(g) * static_cast<double>(g);
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }
    for (const auto& p : params) {
      auto& st = state_[p.name];
      auto& w = p.value->vec();
      const auto& g = p.grad->vec();
      const bool decay = p.value->rank() >= 2 && cfg_.weight_decay > 0;
      if (st.m.size() != w.size()) st.m.assign(w.size(), 0.0);
      if (cfg_.kind == "sgd") {
        for (std::size_t i = 0; i < w.size(); ++i) {
          double gi = clip_scale * static_cast<double>(g[i]);
          if (decay) gi += cfg_.weight_decay * static_cast<double>(w[i]);
          double d = gi;
          if (cfg_.momentum > 0) {
            st.m[i] = cfg_.momentum * st.m[i] + gi;
            d = cfg_.nesterov ? gi + cfg_.momentum * st.m[i] : st.m[i];
          }
          w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * d);
        }
      } else {
        if (st.v.size() != w.size()) st.v.assign(w.size(), 0.0);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = clip_scale * static_cast<double>(g[i]);
          st.m[i] = cfg_.beta1 * st.m[i] + (1 - cfg_.beta1) * gi;
          st.v[i] = cfg_.beta2 * st.v[i] + (1 - cfg_.beta2) * gi * gi;
          double wi = static_cast<double>(w[i]);
          if (decay) wi -= lr * cfg_.weight_decay * wi;
          wi -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + cfg_.eps);
          w[i] = static_cast<T>(wi);
        }
      }
    }
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct State {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::unordered_map<std::string, State> state_;
  std::size_t steps_ = 0;
};

}  // namespace progrow
