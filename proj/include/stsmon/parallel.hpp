#pragma once

#include <cstddef>
#include <exception>

namespace stsmon {

// Caps the worker count for subsequent parallel regions; n <= 0 restores the
// machine default.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [0, n) across threads. If any call throws, the
// exception from the lowest failing index is rethrown after the loop.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::exception_ptr first;
  std::size_t first_index = n;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(stsmon_parallel_for)
      {
        if (static_cast<std::size_t>(i) < first_index) {
          first_index = static_cast<std::size_t>(i);
          first = std::current_exception();
        }
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace stsmon
