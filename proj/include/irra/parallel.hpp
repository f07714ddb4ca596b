#pragma once

#include <cstddef>
#include <functional>

namespace irra {

/// Worker-pool size: IRRA_KIT_THREADS when set, else 1. Throws ConfigError
/// when the variable is not a positive integer.
std::size_t worker_threads();

/// Calls fn(i) for i in [0, n) on up to worker_threads() threads. fn must
/// only touch state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace irra
