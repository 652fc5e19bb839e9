#include "spt/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace spt {

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace spt
