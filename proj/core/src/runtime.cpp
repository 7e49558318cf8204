// Process-wide allocator tuning. Training allocates multi-megabyte tensors
// every step; with default glibc thresholds those round-trip through mmap
// and the page fault cost dominates the math. Keeping large blocks on the
// heap lets them be reused.

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>

namespace sparsemask::detail {

struct MallocTuning {
    MallocTuning() {
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    }
};

static MallocTuning tuning;

}  // namespace sparsemask::detail
#endif
