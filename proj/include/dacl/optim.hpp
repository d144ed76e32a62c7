#pragma once

#include <vector>

#include "dacl/autodiff.hpp"

namespace dacl {

/// Adam with bias correction, eps 1e-8. Moments are kept at storage
/// precision; the per-element update is computed in double so float runs
/// stay deterministic without drifting from the textbook formula.
template <class S>
class Adam {
 public:
  Adam(std::vector<Var<S>> params, double lr, double beta1, double beta2)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2) {
    if (!(lr_ > 0)) throw ContractError("Adam: learning rate must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
      m_.push_back(Tensor<S>::zeros(p.shape()));
      v_.push_back(Tensor<S>::zeros(p.shape()));
    }
  }

  /// One update from the gradients currently stored on the parameters.
  /// Parameters with no gradient this pass are treated as zero-gradient
  /// (moments decay, value unchanged up to bias-corrected zero).
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const bool has = p.has_grad();
      auto& m = m_[i];
      auto& v = v_[i];
      auto& val = p.value_mut();
      for (int64_t j = 0; j < val.numel(); ++j) {
        const double g = has ? double(p.grad()[j]) : 0.0;
        const double mj = beta1_ * double(m[j]) + (1.0 - beta1_) * g;
        const double vj = beta2_ * double(v[j]) + (1.0 - beta2_) * g * g;
        m[j] = S(mj);
        v[j] = S(vj);
        val[j] = S(double(val[j]) - lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + kEps));
      }
      check_finite(val, "adam step");
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t steps_taken() const { return t_; }

  // Flat views for checkpointing.
  const std::vector<Tensor<S>>& moment1() const { return m_; }
  const std::vector<Tensor<S>>& moment2() const { return v_; }
  void restore(int64_t t, std::vector<Tensor<S>> m, std::vector<Tensor<S>> v) {
    if (m.size() != params_.size() || v.size() != params_.size())
      throw ContractError("Adam restore: state count mismatch");
    for (size_t i = 0; i < m.size(); ++i)
      if (m[i].shape != params_[i].shape() || v[i].shape != params_[i].shape())
        throw ContractError("Adam restore: state shape mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  static constexpr double kEps = 1e-8;

 private:
  std::vector<Var<S>> params_;
  double lr_, beta1_, beta2_;
  int64_t t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace dacl
