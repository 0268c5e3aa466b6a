#pragma once

#include <cmath>
#include <cstdint>

// Elementwise transcendentals over contiguous spans, in place friendly.
// Float uses glibc's libmvec vector ABI when the build targets AVX-512
// (error <= 4 ulp); double always takes the scalar libm path so results
// feeding the high-precision oracles stay bit-identical to std::exp/tanh.

#if defined(__linux__) && defined(__x86_64__) && defined(__AVX512F__) && \
    defined(__GLIBC__) && \
    (__GLIBC__ > 2 || (__GLIBC__ == 2 && __GLIBC_MINOR__ >= 35))
#define CABLE_HAVE_LIBMVEC 1
#include <immintrin.h>
extern "C" __m512 _ZGVeN16v_expf(__m512);
extern "C" __m512 _ZGVeN16v_tanhf(__m512);
#endif

namespace cable {

inline void vexp(const float* x, float* y, int64_t n) {
    int64_t i = 0;
#ifdef CABLE_HAVE_LIBMVEC
    for (; i + 16 <= n; i += 16)
        _mm512_storeu_ps(y + i, _ZGVeN16v_expf(_mm512_loadu_ps(x + i)));
#endif
    for (; i < n; ++i) y[i] = std::exp(x[i]);
}

inline void vexp(const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

inline void vtanh(const float* x, float* y, int64_t n) {
    int64_t i = 0;
#ifdef CABLE_HAVE_LIBMVEC
    for (; i + 16 <= n; i += 16)
        _mm512_storeu_ps(y + i, _ZGVeN16v_tanhf(_mm512_loadu_ps(x + i)));
#endif
    for (; i < n; ++i) y[i] = std::tanh(x[i]);
}

inline void vtanh(const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

}  // namespace cable
