#include "cpdflow/kernels.hpp"

namespace cpdflow::simd {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void affine_scalar(const double* w, const double* b, const double* x, double* out,
                   std::size_t out_dim, std::size_t in_dim) {
  for (std::size_t o = 0; o < out_dim; ++o) out[o] = b[o] + dot_scalar(w + o * in_dim, x, in_dim);
}

double sq_dist_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{dot_scalar, axpy_scalar, affine_scalar, sq_dist_scalar};
  return table;
}

}  // namespace cpdflow::simd
