#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "hmc/optim.hpp"
#include "test_util.hpp"

using namespace hmc;
using namespace hmc::nn;

namespace {

std::vector<Parameter> make_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {{"a", test::random_tensor({3, 4}, rng)}, {"b", test::random_tensor({5}, rng)}};
}

void set_grads(std::vector<Parameter>& ps, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& p : ps)
    for (auto& g : p.tensor.grad()) g = u(rng);
}

}  // namespace

TEST_CASE("first Adam step moves each weight by lr against the gradient sign") {
  auto ps = make_params(1);
  std::mt19937_64 rng(2);
  set_grads(ps, rng);
  for (auto& p : ps)
    for (auto& g : p.tensor.grad())
      if (std::abs(g) < 0.05) g = 0.05;
  const auto before0 = ps[0].tensor.value(), before1 = ps[1].tensor.value();
  auto st = AdamState::for_params(ps);
  const double lr = 1e-3;
  adam_step(ps, st, lr);
  CHECK(st.step == 1);
  for (std::size_t k = 0; k < before0.size(); ++k) {
    const double step = ps[0].tensor.value()[k] - before0[k];
    const double sign = ps[0].tensor.grad()[k] > 0 ? 1.0 : -1.0;
    CHECK(std::abs(step + lr * sign) < 1e-6 * lr);
  }
  for (std::size_t k = 0; k < before1.size(); ++k)
    CHECK(std::abs(std::abs(ps[1].tensor.value()[k] - before1[k]) - lr) < 1e-6 * lr);
}

TEST_CASE("Adam matches a scalar reference over many steps") {
  auto ps = make_params(3);
  auto st = AdamState::for_params(ps);
  std::mt19937_64 rng(4);
  std::vector<double> x(ps[1].tensor.value()), m(x.size(), 0), v(x.size(), 0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 50; ++t) {
    set_grads(ps, rng);
    const double lr = exp_decay_lr(5e-3, 0.9, 10, t - 1);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double g = ps[1].tensor.grad()[k];
      m[k] = b1 * m[k] + (1 - b1) * g;
      v[k] = b2 * v[k] + (1 - b2) * g * g;
      const double mh = m[k] / (1 - std::pow(b1, t)), vh = v[k] / (1 - std::pow(b2, t));
      x[k] -= lr * mh / (std::sqrt(vh) + eps);
    }
    adam_step(ps, st, lr);
  }
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(ps[1].tensor.value()[k] == doctest::Approx(x[k]).epsilon(1e-12));
}

TEST_CASE("zero gradient leaves parameters and decays moments") {
  auto ps = make_params(5);
  auto st = AdamState::for_params(ps);
  std::mt19937_64 rng(6);
  set_grads(ps, rng);
  adam_step(ps, st, 1e-3);
  const auto m0 = st.m[0], v0 = st.v[0];
  const auto x0 = ps[0].tensor.value();
  for (auto& p : ps) p.tensor.zero_grad();
  // with fresh moments a zero gradient is a no-op
  auto fresh = AdamState::for_params(ps);
  adam_step(ps, fresh, 1e-3);
  CHECK(ps[0].tensor.value() == x0);
  adam_step(ps, st, 1e-3);
  for (std::size_t k = 0; k < m0.size(); ++k) {
    CHECK(st.m[0][k] == doctest::Approx(0.9 * m0[k]));
    CHECK(st.v[0][k] == doctest::Approx(0.999 * v0[k]));
  }
}

TEST_CASE("frozen parameters do not move") {
  auto ps = make_params(7);
  ps[1].trainable = false;
  std::mt19937_64 rng(8);
  set_grads(ps, rng);
  const auto frozen = ps[1].tensor.value();
  auto st = AdamState::for_params(ps);
  adam_step(ps, st, 1e-2);
  CHECK(ps[1].tensor.value() == frozen);
  CHECK(ps[0].tensor.value() != make_params(7)[0].tensor.value());
}

TEST_CASE("Adam is deterministic") {
  auto run = [] {
    auto ps = make_params(9);
    auto st = AdamState::for_params(ps);
    std::mt19937_64 rng(10);
    for (int i = 0; i < 20; ++i) {
      set_grads(ps, rng);
      adam_step(ps, st, 1e-3);
    }
    return ps[0].tensor.value();
  };
  CHECK(run() == run());
}

TEST_CASE("Adam state shape is validated") {
  auto ps = make_params(1);
  AdamState st = AdamState::for_params(std::span(ps).first(1));
  CHECK_ERRC(adam_step(ps, st, 1e-3), Errc::ShapeMismatch);
  st = AdamState::for_params(ps);
  st.v[1].pop_back();
  CHECK_ERRC(adam_step(ps, st, 1e-3), Errc::ShapeMismatch);
}

TEST_CASE("exponential learning-rate decay") {
  CHECK(exp_decay_lr(5e-4, 0.98, 200, 0) == 5e-4);
  CHECK(exp_decay_lr(5e-4, 0.98, 200, 199) == 5e-4);
  CHECK(exp_decay_lr(5e-4, 0.98, 200, 200) == doctest::Approx(5e-4 * 0.98));
  CHECK(exp_decay_lr(5e-4, 0.98, 200, 400) == doctest::Approx(5e-4 * 0.98 * 0.98));
  CHECK_ERRC(exp_decay_lr(5e-4, 0.98, 0, 1), Errc::ConfigError);
}
