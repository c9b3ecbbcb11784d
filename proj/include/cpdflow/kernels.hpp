#pragma once

// Dense inner-loop kernels with a scalar reference implementation and an
// AVX2/FMA variant. The variant is picked once at first use from CPU
// features; CPDFLOW_ISA=scalar|avx2 in the environment overrides the choice.
// Every variant is deterministic for fixed inputs; variants agree with the
// scalar reference up to floating-point reassociation.

#include <cstddef>
#include <string_view>

namespace cpdflow::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  /// sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  /// out[o] = b[o] + sum_i w[o * in + i] * x[i], for o < out_dim
  void (*affine)(const double* w, const double* b, const double* x, double* out,
                 std::size_t out_dim, std::size_t in_dim);
  /// sum_i (x[i] - y[i])^2
  double (*sq_dist)(const double* x, const double* y, std::size_t n);
};

const KernelTable& scalar_kernels();
const KernelTable& avx2_kernels();  // only valid when isa_available(Isa::Avx2)

bool isa_available(Isa isa);
Isa active_isa();
/// Overrides the active variant. Throws ConfigError if the ISA is unavailable.
void set_active_isa(Isa isa);
const KernelTable& kernels();
std::string_view isa_name(Isa isa);

}  // namespace cpdflow::simd
