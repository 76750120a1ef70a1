#pragma once

// Alternating first-order bilevel optimization over two disjoint parameter
// sets: phi (inner, reconstruction objective) and theta (outer, fusion
// objective), with an exponential moving average shadow of theta.

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifuse/archive.hpp"
#include "bifuse/config.hpp"
#include "bifuse/losses.hpp"
#include "bifuse/nn.hpp"

namespace bifuse {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamPartition {
  ParamSet phi;
  ParamSet theta;

  /// Throws std::logic_error when a tensor is shared or a name collides.
  void validate() const;
};

/// Adam (bias-corrected) or plain gradient descent over a named set.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double beta1, double beta2, double eps);

  /// Apply one update from the accumulated gradients of `params`.
  void step(const ParamSet& params, double lr);
  std::uint64_t steps() const { return steps_; }

  void save(TensorArchive& ar, const std::string& prefix) const;
  void load(const TensorArchive& ar, const std::string& prefix, const ParamSet& params, std::uint64_t steps);

 private:
  OptimizerKind kind_ = OptimizerKind::Adam;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Runs a forward pass and accumulates gradients into leaf tensors (via
/// Tensor::backward); returns the loss report.
using Objective = std::function<LossBreakdown()>;

struct BilevelState {
  ParamPartition partition;
  ParamSet theta_ema;  // owned copies, same names and shapes as theta
  Optimizer opt_phi;
  Optimizer opt_theta;
  double eta_inner = 2e-4;
  double eta_outer = 1e-4;
  double alpha = 0.999;
  double decay_rate = 1.0;
  std::size_t decay_every = 1;
  std::uint64_t t = 0;

  double lr_inner() const;
  double lr_outer() const;
};

/// Validates the partition and hyperparameters; theta_ema starts as a copy of
/// theta. An eta_inner <= eta_outer is a ConfigError unless
/// config.strict_lr_order is false, in which case it is a warning.
BilevelState make_state(ParamPartition partition, const BilevelConfig& config);

/// base * rate^(t / every), continuous in t.
double decayed_lr(double base, double rate, std::size_t every, std::uint64_t t);

/// One descent step on phi from the inner objective. theta and theta_ema are
/// untouched.
LossBreakdown inner_step(BilevelState& state, const Objective& inner);
/// One descent step on theta from the outer objective. Gradients reaching
/// phi are discarded.
LossBreakdown outer_step(BilevelState& state, const Objective& outer);
/// theta_ema <- alpha * theta_ema + (1 - alpha) * theta.
void ema_update(BilevelState& state);

struct StepRecord {
  std::uint64_t t = 0;  // iteration count after the step
  LossBreakdown inner;
  LossBreakdown outer;
  double lr_inner = 0.0;
  double lr_outer = 0.0;
};

/// inner_step, outer_step, ema_update, then t += 1.
StepRecord train_iteration(BilevelState& state, const Objective& inner, const Objective& outer);
/// Single-level update of phi and theta together at the inner rate, then
/// ema_update and t += 1. Used by the joint and fusion-only ablations.
StepRecord joint_iteration(BilevelState& state, const Objective& objective);

/// Throws NumericError naming the first tensor (in name order) whose gradient
/// holds a non-finite value.
void check_finite_grads(const ParamSet& params, const std::string& group);
void zero_grads(const ParamSet& params);

}  // namespace bifuse
