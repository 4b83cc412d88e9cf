#pragma once

// Execution-mode switch for the data-parallel kernels.  Every parallel kernel
// in this project has a serial reference twin; the OpenMP variants write each
// output element exactly once (no reduction reordering), so results are
// bitwise identical to the serial reference for any thread count.

#include <cstddef>

namespace specwave {

enum class ExecMode { Serial, OpenMP };

ExecMode exec_mode();
void set_exec_mode(ExecMode m);
int exec_threads();

// elementwise map over [0, n) honouring the global mode
template <class Body>
void parallel_for(std::ptrdiff_t n, const Body& body) {
    if (exec_mode() == ExecMode::OpenMP) {
#if defined(SPECWAVE_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
        return;
#endif
    }
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
}

}  // namespace specwave
