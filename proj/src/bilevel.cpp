#include "bifuse/bilevel.hpp"

#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

namespace bifuse {

namespace {

void check_finite_loss(const LossBreakdown& b, const char* which) {
  if (std::isfinite(b.total)) return;
  for (const auto& [name, v] : b.terms)
    if (!std::isfinite(v)) throw NumericError(std::string(which) + " loss term '" + name + "' is non-finite");
  throw NumericError(std::string(which) + " loss is non-finite");
}

}  // namespace

void ParamPartition::validate() const {
  std::set<const Node*> nodes;
  for (const auto& [name, t] : phi)
    if (!nodes.insert(t.node()).second) throw std::logic_error("partition: phi tensor '" + name + "' is aliased");
  for (const auto& [name, t] : theta) {
    if (phi.count(name)) throw std::logic_error("partition: '" + name + "' is in both phi and theta");
    if (!nodes.insert(t.node()).second) throw std::logic_error("partition: theta tensor '" + name + "' is shared");
  }
}

Optimizer::Optimizer(OptimizerKind kind, double beta1, double beta2, double eps)
    : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(const ParamSet& params, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    const std::vector<double>& g = p.node()->grad;
    auto w = Tensor(p).mutable_value();
    if (kind_ == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      continue;
    }
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void Optimizer::save(TensorArchive& ar, const std::string& prefix) const {
  for (const auto& [name, m] : m_) {
    ar.tensors[prefix + "m/" + name] = StoredTensor{{m.size()}, m};
    ar.tensors[prefix + "v/" + name] = StoredTensor{{m.size()}, v_.at(name)};
  }
}

void Optimizer::load(const TensorArchive& ar, const std::string& prefix, const ParamSet& params,
                     std::uint64_t steps) {
  m_.clear();
  v_.clear();
  steps_ = steps;
  for (const auto& [name, p] : params) {
    const auto im = ar.tensors.find(prefix + "m/" + name);
    const auto iv = ar.tensors.find(prefix + "v/" + name);
    if (im == ar.tensors.end() && iv == ar.tensors.end()) continue;
    if (im == ar.tensors.end() || iv == ar.tensors.end() || im->second.values.size() != p.numel() ||
        iv->second.values.size() != p.numel()) {
      throw LoadError("optimizer state for '" + name + "' is incomplete or has the wrong size");
    }
    m_[name] = im->second.values;
    v_[name] = iv->second.values;
  }
}

double BilevelState::lr_inner() const { return decayed_lr(eta_inner, decay_rate, decay_every, t); }
double BilevelState::lr_outer() const { return decayed_lr(eta_outer, decay_rate, decay_every, t); }

double decayed_lr(double base, double rate, std::size_t every, std::uint64_t t) {
  return base * std::pow(rate, static_cast<double>(t) / static_cast<double>(every));
}

BilevelState make_state(ParamPartition partition, const BilevelConfig& cfg) {
  partition.validate();
  if (!(cfg.ema_alpha >= 0.0 && cfg.ema_alpha < 1.0)) {
    throw ConfigError({"bilevel.ema_alpha: must lie in [0, 1), got " + std::to_string(cfg.ema_alpha)});
  }
  if (cfg.mode == TrainMode::Bilevel && !(cfg.eta_inner > cfg.eta_outer)) {
    const std::string msg = "bilevel: inner_lr (" + std::to_string(cfg.eta_inner) + ") must exceed outer_lr (" +
                            std::to_string(cfg.eta_outer) + ")";
    if (cfg.strict_lr_order) throw ConfigError({msg});
    spdlog::warn("{}", msg);
  }
  if (cfg.decay_every == 0) throw ConfigError({"bilevel.decay_every: must be at least 1"});
  BilevelState s;
  s.partition = std::move(partition);
  for (const auto& [name, t] : s.partition.theta) s.theta_ema.emplace(name, Tensor::from(t.shape(), {t.value().begin(), t.value().end()}));
  s.opt_phi = Optimizer(cfg.optimizer, cfg.beta1, cfg.beta2, cfg.adam_eps);
  s.opt_theta = Optimizer(cfg.optimizer, cfg.beta1, cfg.beta2, cfg.adam_eps);
  s.eta_inner = cfg.eta_inner;
  s.eta_outer = cfg.eta_outer;
  s.alpha = cfg.ema_alpha;
  s.decay_rate = cfg.decay_rate;
  s.decay_every = cfg.decay_every;
  return s;
}

void zero_grads(const ParamSet& params) {
  for (const auto& [_, p] : params) Tensor(p).zero_grad();
}

void check_finite_grads(const ParamSet& params, const std::string& group) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.node()->grad)
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + group + "/" + name);
  }
  for (const auto& [name, p] : params)
    for (double v : p.value())
      if (!std::isfinite(v)) throw NumericError("non-finite value in " + group + "/" + name);
}

LossBreakdown inner_step(BilevelState& s, const Objective& inner) {
  zero_grads(s.partition.phi);
  zero_grads(s.partition.theta);
  LossBreakdown b = inner();
  check_finite_loss(b, "inner");
  check_finite_grads(s.partition.phi, "phi");
  s.opt_phi.step(s.partition.phi, s.lr_inner());
  zero_grads(s.partition.phi);
  zero_grads(s.partition.theta);
  return b;
}

LossBreakdown outer_step(BilevelState& s, const Objective& outer) {
  zero_grads(s.partition.phi);
  zero_grads(s.partition.theta);
  LossBreakdown b = outer();
  check_finite_loss(b, "outer");
  check_finite_grads(s.partition.theta, "theta");
  s.opt_theta.step(s.partition.theta, s.lr_outer());
  zero_grads(s.partition.phi);
  zero_grads(s.partition.theta);
  return b;
}

void ema_update(BilevelState& s) {
  const double a = s.alpha;
  for (auto& [name, e] : s.theta_ema) {
    auto ev = e.mutable_value();
    const auto tv = s.partition.theta.at(name).value();
    for (std::size_t i = 0; i < ev.size(); ++i) ev[i] = a * ev[i] + (1.0 - a) * tv[i];
  }
}

StepRecord train_iteration(BilevelState& s, const Objective& inner, const Objective& outer) {
  StepRecord r;
  r.lr_inner = s.lr_inner();
  r.lr_outer = s.lr_outer();
  r.inner = inner_step(s, inner);
  r.outer = outer_step(s, outer);
  ema_update(s);
  r.t = ++s.t;
  return r;
}

StepRecord joint_iteration(BilevelState& s, const Objective& objective) {
  StepRecord r;
  r.lr_inner = r.lr_outer = s.lr_inner();
  zero_grads(s.partition.phi);
  zero_grads(s.partition.theta);
  r.inner = objective();
  check_finite_loss(r.inner, "joint");
  check_finite_grads(s.partition.phi, "phi");
  check_finite_grads(s.partition.theta, "theta");
  s.opt_phi.step(s.partition.phi, r.lr_inner);
  s.opt_theta.step(s.partition.theta, r.lr_inner);
  zero_grads(s.partition.phi);
  zero_grads(s.partition.theta);
  ema_update(s);
  r.t = ++s.t;
  return r;
}

}  // namespace bifuse
