#pragma once

#include "escape/common.hpp"
#include "escape/optim.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace escape {

struct RewardRecord {
  double raw_reward = 0.0;  // f(Y, z): detector-derived reward
  double kl_sum = 0.0;      // summed per-token log(policy/reference)
  double beta = 0.0;
  double combined = 0.0;    // raw_reward − beta·kl_sum
};

/// Unscaled KL penalty term: sum of per-token log-probability differences
/// between the soft-prompted policy and the bare reference model.
template <typename S>
double kl_penalty(const std::vector<S>& policy_logps, const std::vector<S>& ref_logps) {
  require(policy_logps.size() == ref_logps.size(), "kl_penalty: length mismatch");
  require(!policy_logps.empty(), "kl_penalty: empty sequences");
  double s = 0.0;
  for (size_t i = 0; i < policy_logps.size(); ++i)
    s += static_cast<double>(policy_logps[i]) - static_cast<double>(ref_logps[i]);
  return s;
}

inline RewardRecord combined_reward(double raw, double kl_sum, double beta) {
  require(beta >= 0.0, "combined_reward: beta must be >= 0");
  require(std::isfinite(raw) && std::isfinite(kl_sum), "combined_reward: non-finite input");
  return {raw, kl_sum, beta, raw - beta * kl_sum};
}

enum class RewardMode { identity, calibrated };

struct RewardSample {
  std::string text;  // candidate Y (carried for bookkeeping only)
  double z_hat = 0.0;
};
using RewardGroup = std::vector<RewardSample>;

/// Reward shaping over the detector's human-probability. Identity mode is
/// an exact pass-through; calibrated mode applies the monotone map
/// f(z) = softplus(u1)·z + softplus(u2)·z² + b fit to comparison groups.
struct RewardModel {
  RewardMode mode = RewardMode::identity;
  double u1 = 0.0, u2 = 0.0, b = 0.0;
  bool had_degenerate_group = false;

  double apply(double z) const {
    if (mode == RewardMode::identity) return z;
    auto softplus = [](double u) { return std::log1p(std::exp(u)); };
    return softplus(u1) * z + softplus(u2) * z * z + b;
  }
};

/// Mean negative grouped log-softmax objective: each group's best candidate
/// (highest z) should out-score the rest under f. `params` = (u1, u2, b).
/// Writes the analytic gradient when `grad` is non-null; returns the loss.
inline double reward_model_loss(const std::vector<RewardGroup>& groups, const Vectord& params,
                                Vectord* grad, bool* degenerate_seen = nullptr) {
  require(params.size() == 3, "reward model has exactly 3 parameters");
  require(!groups.empty(), "reward_model_loss: no groups");
  const double su1 = std::log1p(std::exp(params(0)));
  const double su2 = std::log1p(std::exp(params(1)));
  const double sig1 = 1.0 / (1.0 + std::exp(-params(0)));
  const double sig2 = 1.0 / (1.0 + std::exp(-params(1)));
  if (grad) grad->setZero(3);
  double loss = 0.0;
  for (const auto& g : groups) {
    require(!g.empty(), "reward_model_loss: empty group");
    size_t best = 0;
    bool all_equal = true;
    for (size_t i = 0; i < g.size(); ++i) {
      if (g[i].z_hat > g[best].z_hat) best = i;
      if (g[i].z_hat != g[0].z_hat) all_equal = false;
    }
    if (all_equal && g.size() > 1 && degenerate_seen) *degenerate_seen = true;
    Vectord f(static_cast<Eigen::Index>(g.size()));
    for (size_t i = 0; i < g.size(); ++i) {
      const double z = g[i].z_hat;
      f(static_cast<Eigen::Index>(i)) = su1 * z + su2 * z * z + params(2);
    }
    const double lse = log_sum_exp(f);
    loss += lse - f(static_cast<Eigen::Index>(best));
    if (grad) {
      for (size_t i = 0; i < g.size(); ++i) {
        const double z = g[i].z_hat;
        const double w =
            std::exp(f(static_cast<Eigen::Index>(i)) - lse) - (i == best ? 1.0 : 0.0);
        (*grad)(0) += w * sig1 * z;
        (*grad)(1) += w * sig2 * z * z;
        (*grad)(2) += w;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(groups.size());
  if (grad) *grad *= inv;
  return loss * inv;
}

inline RewardModel fit_reward_model(const std::vector<RewardGroup>& groups, RewardMode mode,
                                    int iters = 400, double lr = 0.05) {
  RewardModel m;
  m.mode = mode;
  if (mode == RewardMode::identity) return m;
  require(!groups.empty(), "fit_reward_model: no groups");
  Vectord p = Vectord::Zero(3);
  Vectord g(3);
  Adam<double> opt(lr);
  for (int it = 0; it < iters; ++it) {
    reward_model_loss(groups, p, &g, &m.had_degenerate_group);
    opt.step({{p.data(), p.size()}}, {{g.data(), g.size()}});
  }
  m.u1 = p(0);
  m.u2 = p(1);
  m.b = p(2);
  return m;
}

}  // namespace escape
