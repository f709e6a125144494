#include "hbmc/parallel.hpp"

#include <cstdlib>
#include <exception>

#ifdef HBMC_HAVE_OPENMP
#include <omp.h>
#endif

namespace hbmc {

int resolve_jobs(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("HBMC_JOBS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
#ifdef HBMC_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void parallel_for(long n, int jobs, const std::function<void(long)>& fn) {
    jobs = resolve_jobs(jobs);
#ifdef HBMC_HAVE_OPENMP
    if (jobs > 1 && n > 1) {
        std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
        for (long i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
        return;
    }
#endif
    for (long i = 0; i < n; ++i) fn(i);
}

}  // namespace hbmc
