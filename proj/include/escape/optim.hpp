#pragma once

#include "escape/common.hpp"

#include <cmath>
#include <vector>

namespace escape {

/// Adam over a fixed set of parameter slots. Callers pass the same slots in
/// the same order on every step; moment buffers are allocated on first use.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  int64_t steps_taken() const { return t_; }

  using ParamView = Eigen::Map<VectorX<Scalar>>;
  using GradView = Eigen::Map<const VectorX<Scalar>>;

  void step(std::vector<ParamView> params, const std::vector<GradView>& grads) {
    require(params.size() == grads.size(), "adam: param/grad slot count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(VectorX<Scalar>::Zero(p.size()));
        v_.emplace_back(VectorX<Scalar>::Zero(p.size()));
      }
    }
    require(m_.size() == params.size(), "adam: slot count changed between steps");
    ++t_;
    const Scalar b1 = Scalar(b1_), b2 = Scalar(b2_);
    const Scalar bc1 = Scalar(1) - Scalar(std::pow(b1_, double(t_)));
    const Scalar bc2 = Scalar(1) - Scalar(std::pow(b2_, double(t_)));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const auto& g = grads[i];
      require(p.size() == m_[i].size() && g.size() == p.size(),
              "adam: slot size changed between steps");
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i].array() + (Scalar(1) - b2) * g.array().square();
      auto m_hat = (m_[i] / bc1).eval();
      auto v_hat = (v_[i] / bc2).eval();
      if (wd_ != 0.0) p -= Scalar(lr_ * wd_) * p;
      p -= Scalar(lr_) * (m_hat.array() / (v_hat.array().sqrt() + Scalar(eps_))).matrix();
    }
  }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  int64_t t_ = 0;
  std::vector<VectorX<Scalar>> m_, v_;
};

template <typename Scalar>
Scalar global_grad_norm(const std::vector<Eigen::Map<const VectorX<Scalar>>>& grads) {
  Scalar s = 0;
  for (const auto& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

}  // namespace escape
