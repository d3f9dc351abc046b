#pragma once

#include <cstddef>
#include <functional>

namespace forestlab {

/// Runs body(i) for i in [0, count) on up to `workers` threads. Indices are
/// handed out in increasing order. The first exception thrown stops further
/// dispatch and is rethrown on the calling thread after all workers join.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body);

/// Worker count to use when the caller passes 0.
std::size_t default_workers();

}  // namespace forestlab
