#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>

#include <cblas.h>

#if defined(__linux__)
#include <strings.h>
#include <unistd.h>
#endif

extern "C" void openblas_set_num_threads(int);
extern "C" char* openblas_get_corename(void);

namespace cable::blas {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
                 float alpha, const float* a, int64_t lda, const float* b,
                 int64_t ldb, float beta, float* c, int64_t ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
                 double alpha, const double* a, int64_t lda, const double* b,
                 int64_t ldb, double beta, double* c, int64_t ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                static_cast<int>(ldc));
}

// y = alpha * op(A) * x + beta * y, A row-major [m x n].
inline void gemv(bool trans, int64_t m, int64_t n, float alpha, const float* a,
                 int64_t lda, const float* x, float beta, float* y) {
    cblas_sgemv(CblasRowMajor, trans ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), alpha, a,
                static_cast<int>(lda), x, 1, beta, y, 1);
}

inline void gemv(bool trans, int64_t m, int64_t n, double alpha,
                 const double* a, int64_t lda, const double* x, double beta,
                 double* y) {
    cblas_dgemv(CblasRowMajor, trans ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), alpha, a,
                static_cast<int>(lda), x, 1, beta, y, 1);
}

// Keep OpenBLAS single threaded; run-to-run determinism beats parallel GEMM.
inline void use_single_thread() { openblas_set_num_threads(1); }

// OpenBLAS picks its dynamic-arch kernels in a shared-library constructor, so
// an in-process setenv is too late to influence it. Virtualized CPUs often
// report model strings the detector does not know, and its fallback is the
// baseline Prescott kernel set -- several times slower than AVX2/AVX-512.
// When that happens on a capable CPU, re-exec the process once with
// OPENBLAS_CORETYPE pinned. Call first thing in main().
inline void ensure_fast_kernels(char** argv) {
#if defined(__linux__) && defined(__x86_64__)
    if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
    const char* want = nullptr;
    if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq"))
        want = "SKYLAKEX";
    else if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        want = "HASWELL";
    if (want == nullptr) return;
    const char* got = openblas_get_corename();
    static const char* const kFastCores[] = {"SkylakeX", "Cooperlake",
                                             "SapphireRapids", "Haswell",
                                             "Zen"};
    for (const char* fast : kFastCores)
        if (strcasecmp(got, fast) == 0) return;
    setenv("OPENBLAS_CORETYPE", want, 1);
    std::fflush(nullptr);
    execv("/proc/self/exe", argv);
    unsetenv("OPENBLAS_CORETYPE");  // exec failed; run with slow kernels
#else
    (void)argv;
#endif
}

}  // namespace cable::blas
