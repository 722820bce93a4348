#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace hmc {

// Process-wide cap on kernel parallelism. Deterministic mode forces every
// reduction to run sequentially in a fixed order.
void set_num_threads(int n);
int num_threads();
void set_deterministic(bool on);
bool deterministic();

// Runs body(i) for i in [0, n). Each index must write only to state owned by
// that index; results are then independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// splitmix64 step, used to derive independent per-block seeds from a master seed.
std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

}  // namespace hmc
