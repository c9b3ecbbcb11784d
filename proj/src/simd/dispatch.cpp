#include <atomic>
#include <cstdlib>
#include <string>

#include "cpdflow/error.hpp"
#include "cpdflow/kernels.hpp"

namespace cpdflow::simd {
namespace {

bool cpu_has_avx2() {
#if defined(CPDFLOW_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("CPDFLOW_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && cpu_has_avx2()) return Isa::Avx2;
  }
  return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

#if !defined(CPDFLOW_HAVE_AVX2)
const KernelTable& avx2_kernels() { return scalar_kernels(); }
#endif

bool isa_available(Isa isa) { return isa == Isa::Scalar || cpu_has_avx2(); }

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw Error(ErrorCode::ConfigError, std::string("ISA not available: ") + std::string(isa_name(isa)));
  }
  active().store(isa, std::memory_order_relaxed);
}

const KernelTable& kernels() {
  return active_isa() == Isa::Avx2 ? avx2_kernels() : scalar_kernels();
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

}  // namespace cpdflow::simd
