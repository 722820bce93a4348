#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hmc/diff.hpp"

namespace hmc::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;

  // Zero moments sized after `params`.
  static AdamState for_params(std::span<const Parameter> params);
};

// One bias-corrected Adam update of every trainable parameter from its
// current gradient (a missing gradient counts as zero).
// Throws Errc::ShapeMismatch when the state does not match the parameters.
void adam_step(std::span<Parameter> params, AdamState& state, double lr, const AdamConfig& cfg = {});

// lr0 * gamma^floor(step / step_size)
double exp_decay_lr(double lr0, double gamma, std::int64_t step_size, std::int64_t step);

}  // namespace hmc::nn
