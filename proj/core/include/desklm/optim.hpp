#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "desklm/tensor.hpp"

namespace desklm {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clipping; off when unset.
  std::optional<double> clip_grad_norm;
};

/// AdamW with decoupled weight decay:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
/// where the decay term uses theta before the update.
template <class T>
class AdamW {
 public:
  using Param = std::pair<std::string, Tensor<T>>;

  explicit AdamW(std::vector<Param> params, AdamWConfig config = {});

  /// Applies one update with learning rate `lr`. Every parameter must carry
  /// a gradient; otherwise std::logic_error names the first one missing.
  void step(double lr);
  void clear_grads();

  long step_count() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Param> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

enum class ScheduleKind {
  kCosine,
  kConstant,
};

struct ScheduleConfig {
  double peak_lr = 2e-5;
  long total_steps = 1;
  double warmup_ratio = 0.01;
  ScheduleKind kind = ScheduleKind::kCosine;

  /// round(warmup_ratio * total_steps)
  long warmup_steps() const;
  void validate() const;
};

/// Linear ramp 0 -> peak over the warmup steps, then (for kCosine)
/// peak * 0.5 * (1 + cos(pi * progress)) with progress running over
/// (warmup, total]. Throws std::out_of_range outside [0, total_steps].
double lr_at(long step, const ScheduleConfig& config);

struct StepEvent {
  long step = 0;  // 1-based optimizer step
  double lr = 0.0;
  double loss = 0.0;  // mean micro-batch loss over the accumulation window
  double tokens_per_sec = 0.0;

  /// "step=.. lr=.. loss=.. tokens_per_sec=.." (key=value, space separated)
  std::string log_line() const;
};

/// Sums gradients over `accumulation_steps` micro-batches, rescales by
/// 1/k, and then takes one optimizer step whose learning rate comes from the
/// schedule. The schedule and the optimizer's step counter advance once per
/// optimizer step, never per micro-batch.
template <class T>
class GradientAccumulator {
 public:
  GradientAccumulator(AdamW<T>& optimizer, ScheduleConfig schedule, int accumulation_steps);

  /// Call after backward() of a micro-batch has populated gradients.
  std::optional<StepEvent> micro_step(double loss, std::size_t tokens);
  /// Steps on a trailing partial window (scaled by 1/its size), if any.
  std::optional<StepEvent> flush();

  int accumulation_steps() const noexcept { return k_; }
  long optimizer_steps() const noexcept { return optimizer_.step_count(); }

 private:
  StepEvent apply();

  AdamW<T>& optimizer_;
  ScheduleConfig schedule_;
  int k_;
  int pending_ = 0;
  double loss_sum_ = 0.0;
  std::size_t tokens_ = 0;
  std::chrono::steady_clock::time_point window_start_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;
extern template class GradientAccumulator<float>;
extern template class GradientAccumulator<double>;

}  // namespace desklm
