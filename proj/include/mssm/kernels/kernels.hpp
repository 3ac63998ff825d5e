#pragma once

#include <cstddef>

// Dense double-precision kernels that back the computation graph.
// Every kernel exists as a scalar reference implementation and, on x86
// machines with AVX2+FMA, as a vectorized variant. The active table is
// selected once at startup from CPUID; tests can pin either variant.
//
// Elementwise kernels are bit-identical across variants (same per-element
// operation sequence). Reductions and gemm accumulate in a different order
// when vectorized and are equivalence-tested against the scalar reference
// under a tight relative tolerance instead.

namespace mssm::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
    const char* name;

    // out[i] = a[i] op b[i]
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*div)(const double* a, const double* b, double* out, std::size_t n);

    // out[i] = c * x[i]
    void (*scale)(double c, const double* x, double* out, std::size_t n);
    // y[i] += c * x[i]
    void (*axpy)(double c, const double* x, double* y, std::size_t n);

    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*sumsq)(const double* x, std::size_t n);
    double (*max)(const double* x, std::size_t n);

    // Row-major C[m x n] = (accumulate ? C : 0) + A[m x k] * B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, const double* b, double* c, bool accumulate);
};

const KernelTable& scalar_table();
const KernelTable& avx2_table();  // falls back to scalar entries when unsupported
bool avx2_supported();

// Dispatched table. Defaults to AVX2 when the CPU supports it.
const KernelTable& active();
void force_isa(Isa isa);
void reset_isa();

}  // namespace mssm::kernels
