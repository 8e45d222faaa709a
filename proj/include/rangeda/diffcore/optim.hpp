#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rangeda/diffcore/var.hpp"

namespace rangeda {

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Var<Scalar> var;
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

template <typename Scalar>
void zero_grad(ParameterList<Scalar>& params) {
  for (auto& p : params) p.var.zero_grad();
}

/// SGD with momentum and L2 weight decay folded into the velocity.
struct SgdState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::vector<Eigen::ArrayXd> velocity;  // parallel to the parameter list
};

/// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
template <typename Scalar>
void sgd_step(SgdState& state, ParameterList<Scalar>& params) {
  if (state.velocity.size() != params.size()) {
    state.velocity.assign(params.size(), Eigen::ArrayXd());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].var;
    if (!p.requires_grad() || !p.has_grad()) {
      throw UsageError("sgd_step: parameter '" + params[i].name + "' has no gradient");
    }
    auto& v = state.velocity[i];
    if (v.size() != p.size()) v = Eigen::ArrayXd::Zero(p.size());
    const Eigen::ArrayXd param = p.value().array().template cast<double>();
    v = state.momentum * v + p.grad().array().template cast<double>() + state.weight_decay * param;
    p.mutable_value().array() = (param - state.lr * v).template cast<Scalar>();
  }
}

// Reconstruction pretraining schedule: linear warm-up over epoch 1, then an
// exponential decay (gamma 0.99) stepped once per epoch.
inline constexpr double kPretrainLrStart = 0.0001;
inline constexpr double kBaseLr = 0.01;
inline constexpr double kPretrainGamma = 0.99;

/// epoch is 1-based; iter is the 0-based iteration inside the epoch.
inline double schedule_pretrain(Index epoch, Index iter, Index iters_per_epoch) {
  if (epoch < 1) throw UsageError("schedule_pretrain: epoch must be >= 1");
  if (epoch == 1) {
    const double frac = iters_per_epoch > 0 ? double(iter) / double(iters_per_epoch) : 0.0;
    return kPretrainLrStart + (kBaseLr - kPretrainLrStart) * frac;
  }
  return kBaseLr * std::pow(kPretrainGamma, double(epoch - 2));
}

// Inverse decay used for joint training: eta_p = eta_0 / (1 + a p)^b.
inline constexpr double kJointA = 10.0;
inline constexpr double kJointB = 0.75;

inline double schedule_joint(double progress, double lr0 = kBaseLr) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw UsageError("schedule_joint: progress must lie in [0, 1]");
  }
  return lr0 / std::pow(1.0 + kJointA * progress, kJointB);
}

}  // namespace rangeda
