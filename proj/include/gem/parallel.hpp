#pragma once

#include <cstddef>
#include <functional>

namespace gem {

// Process-wide worker count used by parallel_for; 1 runs inline.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Work is split in contiguous blocks; callers
// write results by index so output never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gem
