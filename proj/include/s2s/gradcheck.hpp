#pragma once

// Central finite-difference gradient checking. The forward function is
// re-evaluated with perturbed inputs, so the check is independent of the
// backward implementation it validates.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "s2s/tensor.hpp"

namespace s2s::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_tensor = -1;
  int64_t worst_index = -1;
  bool ok(double tol) const { return max_rel_err < tol; }
};

// |fd - g| / max(|fd|, |g|, floor); the floor keeps near-zero gradients from
// inflating the relative error with finite-difference noise.
inline double grad_rel_err(double fd, double g, double floor = 1e-3) {
  return std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), floor});
}

// forward() must rebuild the computation from the current contents of
// `inputs` and return the scalar loss value.
inline GradCheckResult finite_difference_check(std::vector<Tensor> inputs,
                                               const std::function<double()>& forward,
                                               const std::function<Tensor()>& taped_forward,
                                               double step = 1e-5) {
  // analytic gradients
  for (auto& t : inputs) t.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = taped_forward();
    tape.backward(loss);
  }
  GradCheckResult res;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    t.ensure_grad();
    for (int64_t i = 0; i < t.numel(); ++i) {
      double orig = t.data()[i];
      t.data()[i] = orig + step;
      double fp = forward();
      t.data()[i] = orig - step;
      double fm = forward();
      t.data()[i] = orig;
      double fd = (fp - fm) / (2.0 * step);
      double err = grad_rel_err(fd, t.grad()[i]);
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_tensor = static_cast<int64_t>(ti);
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace s2s::ad
