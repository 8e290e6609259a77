#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>

namespace conformal_triage {

/// Worker count from CONFORMAL_TRIAGE_THREADS (0 or unset means hardware concurrency).
std::size_t configured_threads();

/// Calls fn(i) for i in [0, n) on up to `threads` workers (0 = configured_threads()).
/// Each index runs exactly once; the first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t threads = 0);

/// SplitMix64 step, used to derive independent child seeds from a master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace conformal_triage
