#pragma once

#include <cstddef>
#include <functional>

namespace stormbg {

/// Number of hardware threads, at least 1.
unsigned default_threads();

/// Calls body(i) for i in [0, n) on up to `threads` workers, each owning a
/// contiguous block of indices. The first exception thrown by any worker is
/// rethrown on the calling thread after all workers finish.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace stormbg
