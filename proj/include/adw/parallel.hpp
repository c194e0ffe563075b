#pragma once

// OpenMP helpers. Every parallel loop in this codebase writes to disjoint
// output slots (or per-item buffers reduced serially in index order), so
// results are bit-identical for any thread count, including the serial build.

#ifdef _OPENMP
#include <omp.h>
#define ADW_OMP_STRINGIFY(x) #x
#define ADW_PRAGMA_OMP(x) _Pragma(ADW_OMP_STRINGIFY(omp x))
#else
#define ADW_PRAGMA_OMP(x)
#endif

namespace adw {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace adw
