#include <atomic>
#include <cstdlib>
#include <cstring>

#include "otkt/simd/kernels.hpp"

namespace otkt::simd {

#ifndef OTKT_HAVE_AVX2
const KernelTable* avx2_kernels() noexcept { return nullptr; }
#endif

bool cpu_has_avx2() noexcept {
#if defined(OTKT_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* pick(Backend wanted) noexcept {
  if (wanted == Backend::kAvx2 && cpu_has_avx2() && avx2_kernels() != nullptr) {
    return avx2_kernels();
  }
  return &scalar_kernels();
}

const KernelTable* initial() noexcept {
  const char* env = std::getenv("OTKT_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return pick(Backend::kScalar);
  return pick(Backend::kAvx2);
}

std::atomic<const KernelTable*>& slot() noexcept {
  static std::atomic<const KernelTable*> table{initial()};
  return table;
}

}  // namespace

const KernelTable& active() noexcept { return *slot().load(std::memory_order_acquire); }

void force_backend(Backend backend) noexcept {
  slot().store(pick(backend), std::memory_order_release);
}

std::string_view backend_name(Backend backend) noexcept {
  switch (backend) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace otkt::simd
