#include "embedpipe/util.hpp"

#include <cstdio>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace embedpipe {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string Fnv1a::hex() const { return hex64(h_); }

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace embedpipe
