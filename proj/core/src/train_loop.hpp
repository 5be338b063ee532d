#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "desklm/error.hpp"
#include "desklm/graph.hpp"
#include "desklm/optim.hpp"
#include "desklm/training.hpp"

namespace desklm::detail {

// Shared optimizer loop. `loss_of(g, index, dropout_rng)` returns the loss of
// one example and its token count.
template <class T, class LossFn>
TrainResult run_loop(std::vector<std::pair<std::string, Tensor<T>>> params, std::size_t n,
                     const TrainConfig& config, Rng& rng, const StepCallback& on_step,
                     LossFn loss_of) {
  config.validate();
  if (n == 0) throw DegenerateBatchError("training set is empty");
  AdamW<T> opt(std::move(params), config.adamw);
  ScheduleConfig sched;
  sched.peak_lr = config.lr;
  sched.total_steps = config.total_steps(n);
  sched.warmup_ratio = config.warmup_ratio;
  sched.kind = config.schedule;
  GradientAccumulator<T> acc(opt, sched, config.accumulation_steps);
  Rng shuffle = rng.fork("shuffle");
  Rng dropout = rng.fork("dropout");

  TrainResult result;
  auto handle = [&](const std::optional<StepEvent>& ev) {
    if (!ev) return true;
    result.steps = ev->step;
    result.final_loss = ev->loss;
    if (on_step && !on_step(*ev)) {
      result.stopped_early = true;
      return false;
    }
    return result.steps < sched.total_steps;
  };

  const auto b = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; config.max_steps > 0 || epoch < config.epochs; ++epoch) {
    const auto order = shuffled_order(n, shuffle);
    for (std::size_t start = 0; start < n; start += b) {
      const std::size_t end = std::min(n, start + b);
      Graph<T> g;
      Tensor<T> total;
      std::size_t tokens = 0;
      for (std::size_t i = start; i < end; ++i) {
        auto [loss, count] = loss_of(g, order[i], dropout);
        total = total.defined() ? g.add(total, loss) : loss;
        tokens += count;
      }
      if (end - start > 1) total = g.scale(total, T(1) / static_cast<T>(end - start));
      const double value = static_cast<double>(total.item());
      g.backward(total);
      if (!handle(acc.micro_step(value, tokens))) return result;
    }
    if (!handle(acc.flush())) return result;
  }
  return result;
}

}  // namespace desklm::detail
