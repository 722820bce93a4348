#include "hmc/optim.hpp"

#include <cmath>

#include "hmc/error.hpp"

namespace hmc::nn {

AdamState AdamState::for_params(std::span<const Parameter> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Parameter> params, AdamState& state, double lr, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    fail(Errc::ShapeMismatch, "adam state holds " + std::to_string(state.m.size()) + " slots for " +
                                  std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.numel() || state.v[i].size() != params[i].tensor.numel())
      fail(Errc::ShapeMismatch, "adam state shape differs for parameter " + params[i].name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = p.tensor.has_grad();
    const double* g = has ? p.tensor.node()->grad.data() : nullptr;
    auto& x = p.tensor.value();
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * gk * gk;
      if (!p.trainable) continue;
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

double exp_decay_lr(double lr0, double gamma, std::int64_t step_size, std::int64_t step) {
  if (step_size < 1) fail(Errc::ConfigError, "lr step size must be >= 1");
  return lr0 * std::pow(gamma, static_cast<double>(step / step_size));
}

}  // namespace hmc::nn
