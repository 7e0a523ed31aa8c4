#pragma once

#if defined(__SSE__) || defined(_M_X64)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace seg25d {

// Flushes denormals to zero on the calling thread. Saturated sigmoids and
// decaying momentum produce long runs of denormals that otherwise slow
// training severalfold. Call at the start of every compute thread so
// results do not depend on which thread ran the work.
inline void enable_flush_to_zero() {
#if defined(__SSE__) || defined(_M_X64)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

}  // namespace seg25d
