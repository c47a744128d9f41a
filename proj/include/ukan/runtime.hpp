#pragma once

// Process-level tuning for the training loop.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ukan {

/// Every step frees and reallocates the same multi-megabyte activation and
/// gradient buffers. glibc serves those with mmap and returns them on free,
/// so each step pays page faults again. Keeping them on the heap avoids that.
/// No-op on other C libraries.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace ukan
