#pragma once

#include <functional>

namespace hbmc {

// Worker count resolution: explicit request > HBMC_JOBS env > OpenMP default.
int resolve_jobs(int requested);

// Runs fn(0..n-1) across up to `jobs` OpenMP threads (serial without OpenMP or
// jobs <= 1). The first exception thrown by any iteration is rethrown on the
// calling thread. Iteration order is unspecified; callers that need
// deterministic results must write to per-index slots.
void parallel_for(long n, int jobs, const std::function<void(long)>& fn);

}  // namespace hbmc
