#pragma once
// Central finite differences against tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rrhf/autograd.hpp"

namespace rrhf::testing {

struct GradReport {
  double worst = 0.0;  // worst element-wise relative error
  std::string where;
};

// err = |a - n| / max(|a|, |n|, floor)
inline double rel_err(double a, double n, double floor = 1e-5) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// `loss` builds a scalar on a fresh tape from the given parameters.
inline GradReport check_params(std::vector<Parameter*> params, const std::function<Var(Tape&)>& loss,
                               double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Tape t;
    t.backward(loss(t));
  }
  GradReport rep;
  auto eval = [&] {
    Tape t(false);
    return loss(t).item();
  };
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = eval();
      p->value[i] = keep - h;
      const double down = eval();
      p->value[i] = keep;
      const double num = (up - down) / (2 * h);
      const double e = rel_err(p->grad[i], num);
      if (e > rep.worst) {
        rep.worst = e;
        rep.where = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(p->grad[i]) +
                    " numeric=" + std::to_string(num);
      }
    }
  }
  return rep;
}

}  // namespace rrhf::testing
