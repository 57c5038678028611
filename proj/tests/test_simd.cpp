#include <random>

#include "doctest.h"
#include "otkt/array2.hpp"
#include "otkt/simd/kernels.hpp"
#include "test_util.hpp"

using namespace otkt;

namespace {

double rel_diff(const Array2& a, const Array2& b) {
  double scale = 1.0;
  for (double v : a.flat()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

}  // namespace

TEST_CASE("scalar reference gemm matches the naive triple loop") {
  std::mt19937_64 rng(7);
  const Array2 a = testing::random_array(rng, 5, 7);
  const Array2 b = testing::random_array(rng, 7, 3);
  Array2 c(5, 3);
  simd::scalar_kernels().gemm_nn(a.data(), b.data(), c.data(), 5, 7, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 7; ++p) acc += a(i, p) * b(p, j);
      CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const simd::KernelTable* fast = simd::avx2_kernels();
  if (fast == nullptr || !simd::cpu_has_avx2()) {
    MESSAGE("AVX2 variant unavailable on this host; equivalence test skipped");
    return;
  }
  const simd::KernelTable& ref = simd::scalar_kernels();
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 37);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const Array2 a = testing::random_array(rng, m, k);
    const Array2 b = testing::random_array(rng, k, n);
    const Array2 bt = testing::random_array(rng, n, k);
    const Array2 at = testing::random_array(rng, k, m);
    Array2 c_ref(m, n), c_fast(m, n);

    ref.gemm_nn(a.data(), b.data(), c_ref.data(), m, k, n);
    fast->gemm_nn(a.data(), b.data(), c_fast.data(), m, k, n);
    REQUIRE(rel_diff(c_ref, c_fast) < 1e-13);

    ref.gemm_nt(a.data(), bt.data(), c_ref.data(), m, k, n);
    fast->gemm_nt(a.data(), bt.data(), c_fast.data(), m, k, n);
    REQUIRE(rel_diff(c_ref, c_fast) < 1e-13);

    ref.gemm_tn(at.data(), b.data(), c_ref.data(), m, k, n);
    fast->gemm_tn(at.data(), b.data(), c_fast.data(), m, k, n);
    REQUIRE(rel_diff(c_ref, c_fast) < 1e-13);

    const double d_ref = ref.dot(a.data(), a.data(), a.size());
    CHECK(fast->dot(a.data(), a.data(), a.size()) == doctest::Approx(d_ref).epsilon(1e-13));
    CHECK(fast->max_reduce(a.data(), a.size()) == ref.max_reduce(a.data(), a.size()));

    Array2 y_ref = b, y_fast = b;
    ref.axpy(0.37, bt.data(), y_ref.data(), std::min(bt.size(), b.size()));
    fast->axpy(0.37, bt.data(), y_fast.data(), std::min(bt.size(), b.size()));
    REQUIRE(rel_diff(y_ref, y_fast) < 1e-15);
  }
}

TEST_CASE("force_backend switches the active table") {
  simd::force_backend(simd::Backend::kScalar);
  CHECK(simd::active().backend == simd::Backend::kScalar);
  simd::force_backend(simd::Backend::kAvx2);
  CHECK(simd::active().backend ==
        (simd::cpu_has_avx2() ? simd::Backend::kAvx2 : simd::Backend::kScalar));
  CHECK(simd::backend_name(simd::Backend::kAvx2) == "avx2");
}

TEST_CASE("matmul rejects nonconforming shapes with both shapes in the message") {
  const Array2 a(2, 3), b(2, 3);
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const std::exception& e) {
    const std::string what = e.what();
    CHECK(what.find("[2x3]") != std::string::npos);
    CHECK(what.find("matmul") != std::string::npos);
  }
}
