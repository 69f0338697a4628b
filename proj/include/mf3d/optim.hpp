#pragma once

// AdamW with per-group learning rates, and the warmup + cosine schedule.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/nn.hpp"

namespace mf3d {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One decoupled-decay Adam update; `step` is the 1-based update count.
/// Arithmetic runs in double and is rounded into T once per element.
template <class T>
void adamw_step(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::uint64_t step,
                const AdamWConfig& cfg) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
    throw ShapeError("adamw_step: parameter, gradient and moment sizes disagree");
  if (step == 0) throw Error("adamw_step: step counter starts at 1");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(static_cast<double>(grads[i])))
      throw NumericError("adamw_step: non-finite gradient at element " + std::to_string(i));
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    double p = static_cast<double>(params[i]) * decay;
    p -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    params[i] = static_cast<T>(p);
  }
}

/// Linear warmup to base_lr, then cosine decay to 0.01 * base_lr at `total`.
inline double cosine_schedule(std::size_t step, std::size_t total, std::size_t warmup, double base_lr) {
  if (step > total) step = total;
  if (warmup > total) warmup = total;
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return base_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

struct ParamGroup {
  std::string prefix;  // parameters whose names start with this
  double lr = 1e-3;
};

/// AdamW over a ParameterStore. Each parameter belongs to the first group whose
/// prefix matches its name; unmatched parameters are an error.
template <class T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& store, std::vector<ParamGroup> groups, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : store_(&store), groups_(std::move(groups)), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (const auto& [name, t] : store.entries()) {
      std::size_t g = groups_.size();
      for (std::size_t i = 0; i < groups_.size(); ++i)
        if (name.starts_with(groups_[i].prefix)) {
          g = i;
          break;
        }
      if (g == groups_.size()) throw ConfigError("parameter " + name + " belongs to no optimizer group");
      group_of_.push_back(g);
      m_.emplace_back(t.numel(), T(0));
      v_.emplace_back(t.numel(), T(0));
    }
  }

  /// Applies one update with every group's lr multiplied by `lr_factor`.
  /// All gradients are checked before any parameter moves.
  void step(double lr_factor = 1.0) {
    auto& entries = store_->entries();
    for (const auto& [name, t] : entries) {
      if (!t.has_grad()) continue;
      for (T g : t.grad())
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + name);
    }
    ++step_;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& t = entries[i].second;
      AdamWConfig cfg{groups_[group_of_[i]].lr * lr_factor, weight_decay_, beta1_, beta2_, eps_};
      std::vector<T> zeros;
      std::span<const T> g = t.grad();
      if (!t.has_grad()) {
        zeros.assign(t.numel(), T(0));
        g = zeros;
      }
      adamw_step<T>(t.mutable_values(), g, m_[i], v_[i], step_, cfg);
    }
  }

  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t s) { step_ = s; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }

 private:
  ParameterStore<T>* store_;
  std::vector<ParamGroup> groups_;
  std::vector<std::size_t> group_of_;
  double weight_decay_, beta1_, beta2_, eps_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace mf3d
