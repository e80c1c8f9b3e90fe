#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nfsm/tensor.hpp"

namespace nfsm {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares tape gradients of the scalar `loss` with central differences,
// coordinate by coordinate, over every tensor in `params`. Relative error
// uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckResult grad_check_detailed(const std::function<Tensor()>& loss,
                                           std::vector<Tensor> params, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("grad_check: eps must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor l = loss();
    if (!std::isfinite(l.item())) throw NumericError("grad_check: non-finite loss");
    tape.backward(l);
  }
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto vals = p.data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = loss().item();
      vals[i] = saved - eps;
      const double down = loss().item();
      vals[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic[i] - numeric) / denom;
      if (err > res.max_relative_error) {
        res.max_relative_error = err;
        res.worst_param = pi;
        res.worst_index = i;
      }
      ++res.checked;
    }
  }
  return res;
}

inline double grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params, double eps) {
  return grad_check_detailed(loss, std::move(params), eps).max_relative_error;
}

}  // namespace nfsm
