#pragma once

// AdamW with decoupled weight decay and the cosine learning-rate schedule.

#include <cmath>
#include <numbers>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/nn.hpp"

namespace s2s::train {

inline double cosine_lr(int64_t t, int64_t total, double lr0, double lr_min) {
  if (t < 0 || t > total) throw Error("cosine_lr: step " + std::to_string(t) + " outside [0, " + std::to_string(total) + "]");
  double phase = total > 0 ? static_cast<double>(t) / static_cast<double>(total) : 0.0;
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

class AdamW {
 public:
  AdamW() = default;

  explicit AdamW(const std::vector<nn::Parameter>& params, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    }
  }

  // Decoupled decay first (p -= lr * wd * p), then the bias-corrected Adam
  // update. Parameters without a grad buffer only decay.
  void step(std::vector<nn::Parameter>& params, double lr, double weight_decay) {
    if (params.size() != m_.size()) throw Error("AdamW: parameter count changed");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      ad::Tensor& tensor = params[pi].tensor;
      double* p = tensor.data();
      const int64_t n = tensor.numel();
      std::vector<double>& m = m_[pi];
      std::vector<double>& v = v_[pi];
      const double* g = tensor.has_grad() ? tensor.grad() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        p[i] -= lr * weight_decay * p[i];
        double gi = g ? g[i] : 0.0;
        m[static_cast<size_t>(i)] = beta1_ * m[static_cast<size_t>(i)] + (1.0 - beta1_) * gi;
        v[static_cast<size_t>(i)] = beta2_ * v[static_cast<size_t>(i)] + (1.0 - beta2_) * gi * gi;
        double mhat = m[static_cast<size_t>(i)] / bc1;
        double vhat = v[static_cast<size_t>(i)] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void restore(int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace s2s::train
