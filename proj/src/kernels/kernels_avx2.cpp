#include "mssm/kernels/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define MSSM_X86 1
#include <immintrin.h>
#else
#define MSSM_X86 0
#endif

namespace mssm::kernels {

#if MSSM_X86

#define MSSM_AVX2_FN __attribute__((target("avx2,fma")))

namespace {

// Elementwise kernels apply exactly one IEEE operation per element, so the
// results are bit-identical to the scalar reference.

MSSM_AVX2_FN void v_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}
MSSM_AVX2_FN void v_sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}
MSSM_AVX2_FN void v_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}
MSSM_AVX2_FN void v_div(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}
MSSM_AVX2_FN void v_scale(double c, const double* x, double* out, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = c * x[i];
}
// mul+add instead of fma keeps axpy bit-identical to the scalar kernel.
MSSM_AVX2_FN void v_axpy(double c, const double* x, double* y, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(vc, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += c * x[i];
}

MSSM_AVX2_FN double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

MSSM_AVX2_FN double v_dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
MSSM_AVX2_FN double v_sum(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i];
    return acc;
}
MSSM_AVX2_FN double v_sumsq(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256d a = _mm256_loadu_pd(x + i);
        __m256d b = _mm256_loadu_pd(x + i + 4);
        acc0 = _mm256_fmadd_pd(a, a, acc0);
        acc1 = _mm256_fmadd_pd(b, b, acc1);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * x[i];
    return acc;
}
MSSM_AVX2_FN double v_max(const double* x, std::size_t n) {
    std::size_t i = 0;
    double m = x[0];
    if (n >= 4) {
        __m256d vm = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
        __m128d lo = _mm_max_pd(_mm256_castpd256_pd128(vm), _mm256_extractf128_pd(vm, 1));
        m = _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

// 4x8 register-tiled gemm. B rows are streamed, A entries broadcast, C held
// in 8 ymm accumulators per tile.
MSSM_AVX2_FN void gemm_tile_4x8(std::size_t k, const double* a, std::size_t lda,
                                const double* b, std::size_t ldb, double* c, std::size_t ldc,
                                bool accumulate) {
    __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
    __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
    __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
    __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
    for (std::size_t kk = 0; kk < k; ++kk) {
        const __m256d b0 = _mm256_loadu_pd(b + kk * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + kk * ldb + 4);
        __m256d a0 = _mm256_set1_pd(a[0 * lda + kk]);
        __m256d a1 = _mm256_set1_pd(a[1 * lda + kk]);
        __m256d a2 = _mm256_set1_pd(a[2 * lda + kk]);
        __m256d a3 = _mm256_set1_pd(a[3 * lda + kk]);
        c00 = _mm256_fmadd_pd(a0, b0, c00);
        c01 = _mm256_fmadd_pd(a0, b1, c01);
        c10 = _mm256_fmadd_pd(a1, b0, c10);
        c11 = _mm256_fmadd_pd(a1, b1, c11);
        c20 = _mm256_fmadd_pd(a2, b0, c20);
        c21 = _mm256_fmadd_pd(a2, b1, c21);
        c30 = _mm256_fmadd_pd(a3, b0, c30);
        c31 = _mm256_fmadd_pd(a3, b1, c31);
    }
    auto store = [&](double* row, __m256d lo, __m256d hi) MSSM_AVX2_FN {
        if (accumulate) {
            lo = _mm256_add_pd(lo, _mm256_loadu_pd(row));
            hi = _mm256_add_pd(hi, _mm256_loadu_pd(row + 4));
        }
        _mm256_storeu_pd(row, lo);
        _mm256_storeu_pd(row + 4, hi);
    };
    store(c + 0 * ldc, c00, c01);
    store(c + 1 * ldc, c10, c11);
    store(c + 2 * ldc, c20, c21);
    store(c + 3 * ldc, c30, c31);
}

MSSM_AVX2_FN void v_gemm_nn(std::size_t m, std::size_t n, std::size_t k,
                            const double* a, const double* b, double* c, bool accumulate) {
    const std::size_t mb = m - m % 4;
    const std::size_t nb = n - n % 8;
    for (std::size_t i = 0; i < mb; i += 4)
        for (std::size_t j = 0; j < nb; j += 8)
            gemm_tile_4x8(k, a + i * k, k, b + j, n, c + i * n + j, n, accumulate);
    // Edge rows / columns fall back to the reference loop.
    auto edge = [&](std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* crow = c + i * n;
            if (!accumulate)
                for (std::size_t j = j0; j < j1; ++j) crow[j] = 0.0;
            const double* arow = a + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = b + kk * n;
                for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (nb < n) edge(0, mb, nb, n);
    if (mb < m) edge(mb, m, 0, n);
}

}  // namespace

bool avx2_supported() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

const KernelTable& avx2_table() {
    if (!avx2_supported()) return scalar_table();
    static const KernelTable t = {
        "avx2", v_add, v_sub, v_mul, v_div, v_scale, v_axpy,
        v_dot,  v_sum, v_sumsq, v_max, v_gemm_nn,
    };
    return t;
}

#else  // !MSSM_X86

bool avx2_supported() { return false; }
const KernelTable& avx2_table() { return scalar_table(); }

#endif

namespace {
const KernelTable* g_forced = nullptr;
}

const KernelTable& active() {
    if (g_forced) return *g_forced;
    static const KernelTable& chosen = avx2_supported() ? avx2_table() : scalar_table();
    return chosen;
}

void force_isa(Isa isa) {
    g_forced = (isa == Isa::Scalar) ? &scalar_table() : &avx2_table();
}

void reset_isa() { g_forced = nullptr; }

}  // namespace mssm::kernels
