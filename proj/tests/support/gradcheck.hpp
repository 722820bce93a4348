#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hmc/diff.hpp"

namespace hmc::test {

struct GradcheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t worst_input = 0, worst_element = 0;
  double worst_analytic = 0, worst_numeric = 0;
};

// Compares the analytic gradient of the scalar `f()` with respect to every
// element of `inputs` against central differences. rel = |a - n| / max(1e-6, |a|, |n|).
inline GradcheckResult gradcheck(std::span<nn::Tensor> inputs, const std::function<nn::Tensor()>& f,
                                 double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  nn::backward(f());
  GradcheckResult r;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    const std::vector<double> analytic = t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);
    auto& v = t.value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f().item();
      v[i] = keep - h;
      const double down = f().item();
      v[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({1e-6, std::abs(analytic[i]), std::abs(numeric)});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_input = ti;
        r.worst_element = i;
        r.worst_analytic = analytic[i];
        r.worst_numeric = numeric;
      }
      ++r.checked;
    }
  }
  return r;
}

// Scalar projection of a tensor onto fixed random weights, so non-scalar op
// outputs can be checked.
inline nn::Tensor random_projection(const nn::Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = u(rng);
  return nn::mean(nn::mul(y, nn::Tensor::from(y.shape(), std::move(w))));
}

inline nn::Tensor random_tensor(const nn::Shape& s, std::mt19937_64& rng, bool requires_grad = true,
                                double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(nn::numel(s));
  for (auto& x : v) x = u(rng);
  return nn::Tensor::from(s, std::move(v), requires_grad);
}

}  // namespace hmc::test
