#include "rrhf/optimizer.hpp"

#include <cmath>

#include "rrhf/errors.hpp"

namespace rrhf {

double LinearSchedule::at(std::size_t step) const {
  if (step >= total) return 0.0;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const std::size_t span = total - warmup;
  return peak * static_cast<double>(total - step) / static_cast<double>(span);
}

Optimizer::Optimizer(std::span<Parameter> params, LinearSchedule schedule, AdamConfig adam,
                     std::size_t accumulation_steps)
    : params_(params),
      schedule_(schedule),
      adam_(adam),
      accumulation_(accumulation_steps),
      trainable_(params.size(), true) {
  if (accumulation_ == 0) throw ConfigError("accumulation_steps", "must be at least 1");
  if (schedule_.total == 0) throw ConfigError("total_steps", "must be at least 1");
  if (schedule_.warmup > schedule_.total) throw ConfigError("warmup_steps", "exceeds total steps");
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Optimizer::set_trainable(std::vector<bool> mask) {
  if (mask.size() != params_.size()) throw ContractError("trainable mask size mismatch");
  trainable_ = std::move(mask);
}

bool Optimizer::micro_step() {
  if (++pending_ < accumulation_) return false;
  apply();
  return true;
}

bool Optimizer::flush() {
  if (pending_ == 0) return false;
  apply();
  return true;
}

void check_finite_gradients(std::span<const Parameter> params) {
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.grad.numel(); ++i) {
      if (!std::isfinite(p.grad[i])) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "' at element " + std::to_string(i) +
                           " (value " + std::to_string(p.grad[i]) + ")");
      }
    }
  }
}

void Optimizer::apply() {
  check_finite_gradients(params_);
  const double lr = schedule_.at(step_);
  double clip = 1.0;
  if (adam_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!trainable_[i]) continue;
      for (double g : params_[i].grad.data()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > adam_.max_grad_norm) clip = adam_.max_grad_norm / norm;
  }
  const double t = static_cast<double>(step_ + 1);
  const double bc1 = 1.0 - std::pow(adam_.beta1, t);
  const double bc2 = 1.0 - std::pow(adam_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_[i];
    if (!trainable_[i]) {
      p.zero_grad();
      continue;
    }
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j] * clip;
      m[j] = adam_.beta1 * m[j] + (1.0 - adam_.beta1) * g;
      v[j] = adam_.beta2 * v[j] + (1.0 - adam_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + adam_.eps);
    }
    p.zero_grad();
  }
  ++step_;
  pending_ = 0;
}

}  // namespace rrhf
