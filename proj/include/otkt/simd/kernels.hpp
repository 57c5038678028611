#pragma once

// Dense double-precision inner loops. Each kernel has a portable scalar
// reference and, on x86-64, an AVX2+FMA variant. The variant is picked once
// at first use from CPUID; OTKT_SIMD=scalar in the environment (or
// force_backend) pins the reference path.

#include <cstddef>
#include <string_view>

namespace otkt::simd {

enum class Backend { kScalar, kAvx2 };

// c[m x n] = a[m x k] * b[k x n]
using GemmNN = void (*)(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);
// c[m x n] = a[m x k] * b[n x k]^T
using GemmNT = void (*)(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);
// c[m x n] = a[k x m]^T * b[k x n]
using GemmTN = void (*)(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);
using Dot = double (*)(const double* x, const double* y, std::size_t n);
// y += alpha * x
using Axpy = void (*)(double alpha, const double* x, double* y, std::size_t n);
// returns max_i x[i]
using MaxReduce = double (*)(const double* x, std::size_t n);

struct KernelTable {
  Backend backend;
  GemmNN gemm_nn;
  GemmNT gemm_nt;
  GemmTN gemm_tn;
  Dot dot;
  Axpy axpy;
  MaxReduce max_reduce;
};

const KernelTable& scalar_kernels() noexcept;
// nullptr when the binary was built without the AVX2 translation unit.
const KernelTable* avx2_kernels() noexcept;

bool cpu_has_avx2() noexcept;

// Table in effect for this process.
const KernelTable& active() noexcept;

// Overrides the runtime choice; kAvx2 silently falls back to scalar when
// unsupported. Not thread-safe against concurrent kernel calls.
void force_backend(Backend backend) noexcept;

std::string_view backend_name(Backend backend) noexcept;

}  // namespace otkt::simd
