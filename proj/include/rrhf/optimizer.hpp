#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rrhf/autograd.hpp"

namespace rrhf {

// Linear warmup from 0 to peak over `warmup` steps, then linear decay to 0 at
// `total` steps. Step indices count optimizer updates already applied.
struct LinearSchedule {
  double peak = 1e-3;
  std::size_t warmup = 0;
  std::size_t total = 1;

  double at(std::size_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables global-norm clipping
};

// Adam with a learning-rate schedule and gradient accumulation.
//
// Callers scale each micro-batch loss by 1/accumulation_steps and call
// micro_step() after its backward pass; the update is applied (and gradients
// cleared) every accumulation_steps micro-batches or on flush().
class Optimizer {
 public:
  Optimizer(std::span<Parameter> params, LinearSchedule schedule, AdamConfig adam = {},
            std::size_t accumulation_steps = 1);

  // Returns true when this call applied an update.
  bool micro_step();
  // Applies a pending partial accumulation window. Returns true if it did.
  bool flush();

  // Applies an update from the current gradients regardless of the window.
  void apply();

  std::size_t step() const noexcept { return step_; }
  double current_lr() const { return schedule_.at(step_); }
  std::size_t pending() const noexcept { return pending_; }
  std::size_t accumulation_steps() const noexcept { return accumulation_; }

  // Restricts updates to a subset of the parameters (others keep their values
  // and moments); used to freeze the backbone or the head.
  void set_trainable(std::vector<bool> mask);

 private:
  std::span<Parameter> params_;
  LinearSchedule schedule_;
  AdamConfig adam_;
  std::size_t accumulation_;
  std::size_t pending_ = 0;
  std::size_t step_ = 0;
  std::vector<Tensor> m_, v_;
  std::vector<bool> trainable_;
};

// Throws NumericError naming the first parameter with a non-finite gradient.
void check_finite_gradients(std::span<const Parameter> params);

}  // namespace rrhf
