#include "desklm/optim.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace desklm {

template <class T>
AdamW<T>::AdamW(std::vector<Param> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.beta1 < 0 || config_.beta1 >= 1 || config_.beta2 < 0 || config_.beta2 >= 1) {
    throw std::invalid_argument("AdamW: betas must be in [0, 1)");
  }
  if (config_.eps <= 0) throw std::invalid_argument("AdamW: eps must be positive");
  if (config_.weight_decay < 0) throw std::invalid_argument("AdamW: weight_decay must be >= 0");
  for (const auto& [_, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

template <class T>
void AdamW<T>::step(double lr) {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) {
      throw std::logic_error("AdamW: trainable parameter '" + name + "' has no gradient");
    }
  }
  double clip = 1.0;
  if (config_.clip_grad_norm) {
    double sq = 0.0;
    for (const auto& [_, t] : params_)
      for (T g : t.grad()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > *config_.clip_grad_norm) clip = *config_.clip_grad_norm / (norm + 1e-12);
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto& t = params_[p].second;
    auto theta = t.mutable_data();
    const auto grad = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = static_cast<double>(grad[i]) * clip;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      const double old = theta[i];
      theta[i] = static_cast<T>(old - lr * m_hat / (std::sqrt(v_hat) + config_.eps) -
                                lr * config_.weight_decay * old);
    }
  }
}

template <class T>
void AdamW<T>::clear_grads() {
  for (auto& [_, t] : params_) t.clear_grad();
}

// --- schedule ----------------------------------------------------------------

long ScheduleConfig::warmup_steps() const {
  return std::lround(warmup_ratio * static_cast<double>(total_steps));
}

void ScheduleConfig::validate() const {
  if (!(peak_lr >= 0.0)) throw std::invalid_argument("schedule: peak_lr must be >= 0");
  if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw std::invalid_argument("schedule: warmup_ratio must be in [0, 1)");
  }
}

double lr_at(long step, const ScheduleConfig& config) {
  config.validate();
  if (step < 0 || step > config.total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(config.total_steps) + "]");
  }
  const long warmup = config.warmup_steps();
  if (step < warmup) {
    return config.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (config.kind == ScheduleKind::kConstant || config.total_steps == warmup) {
    return config.peak_lr;
  }
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(config.total_steps - warmup);
  return config.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string StepEvent::log_line() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "step=%ld lr=%.6e loss=%.6f tokens_per_sec=%.1f", step, lr,
                loss, tokens_per_sec);
  return buf;
}

// --- accumulation ------------------------------------------------------------

template <class T>
GradientAccumulator<T>::GradientAccumulator(AdamW<T>& optimizer, ScheduleConfig schedule,
                                            int accumulation_steps)
    : optimizer_(optimizer), schedule_(schedule), k_(accumulation_steps) {
  if (k_ < 1) throw std::invalid_argument("accumulation_steps must be >= 1");
  schedule_.validate();
  window_start_ = std::chrono::steady_clock::now();
}

template <class T>
std::optional<StepEvent> GradientAccumulator<T>::micro_step(double loss, std::size_t tokens) {
  ++pending_;
  loss_sum_ += loss;
  tokens_ += tokens;
  if (pending_ < k_) return std::nullopt;
  return apply();
}

template <class T>
std::optional<StepEvent> GradientAccumulator<T>::flush() {
  if (pending_ == 0) return std::nullopt;
  return apply();
}

template <class T>
StepEvent GradientAccumulator<T>::apply() {
  const T inv = T(1) / static_cast<T>(pending_);
  if (pending_ > 1) {
    for (const auto& [_, t] : optimizer_.params()) {
      if (!t.has_grad()) continue;  // step() reports the missing gradient
      Tensor<T> handle = t;
      for (auto& x : handle.mutable_grad()) x *= inv;
    }
  }
  const long index = std::min(optimizer_.step_count(), schedule_.total_steps);
  const double lr = lr_at(index, schedule_);
  optimizer_.step(lr);
  optimizer_.clear_grads();

  const auto now = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(now - window_start_).count();
  StepEvent ev;
  ev.step = optimizer_.step_count();
  ev.lr = lr;
  ev.loss = loss_sum_ / pending_;
  ev.tokens_per_sec = secs > 0 ? static_cast<double>(tokens_) / secs : 0.0;
  pending_ = 0;
  loss_sum_ = 0.0;
  tokens_ = 0;
  window_start_ = now;
  return ev;
}

template class AdamW<float>;
template class AdamW<double>;
template class GradientAccumulator<float>;
template class GradientAccumulator<double>;

}  // namespace desklm
