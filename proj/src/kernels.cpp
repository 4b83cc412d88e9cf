#include "specwave/kernels.hpp"

#if defined(SPECWAVE_HAVE_OPENMP)
#include <omp.h>
#endif

namespace specwave {

namespace {
#if defined(SPECWAVE_HAVE_OPENMP)
ExecMode g_mode = ExecMode::OpenMP;
#else
ExecMode g_mode = ExecMode::Serial;
#endif
}  // namespace

ExecMode exec_mode() { return g_mode; }

void set_exec_mode(ExecMode m) { g_mode = m; }

int exec_threads() {
#if defined(SPECWAVE_HAVE_OPENMP)
    return (g_mode == ExecMode::OpenMP) ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

}  // namespace specwave
