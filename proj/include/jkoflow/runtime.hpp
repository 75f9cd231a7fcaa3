#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace jko {

/// Keeps freed batch-sized temporaries on the heap instead of unmapping them
/// after every tape operation. Call once at program start.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace jko
