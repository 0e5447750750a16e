#pragma once

#include <cstddef>
#include <functional>

namespace cseg {

// Process-wide worker bound. 0 or 1 means run inline.
void set_thread_count(int threads);
int thread_count();

// Calls fn(i) for i in [0, n) on up to thread_count() workers. Work is
// statically chunked so every index is always handled by the same logical
// worker; results written per index are therefore deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cseg
