#include "bseg/common/memory.hpp"

#include <malloc.h>

#include <mutex>

namespace bseg {

void retain_freed_memory() {
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
}

}  // namespace bseg
