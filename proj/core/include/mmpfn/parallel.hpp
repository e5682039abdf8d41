#pragma once

#include <cstddef>
#include <functional>

namespace mmpfn {

// Runs fn(i) for i in [0, n) on up to `jobs` threads (jobs <= 1 runs inline).
// Work is handed out by index, so results written to slot i are independent
// of scheduling. The first exception thrown by any task is rethrown after all
// threads finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace mmpfn
