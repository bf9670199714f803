#pragma once

#include <cstddef>
#include <functional>
#include <optional>

namespace evtrisk {

/// Explicit request if given, else EVTRISK_THREADS, else hardware concurrency; at least 1.
unsigned resolve_threads(std::optional<unsigned> requested = std::nullopt);

/// Calls fn(i) for i in [0, count) on up to `threads` workers. Work items must
/// write only to their own slot; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace evtrisk
