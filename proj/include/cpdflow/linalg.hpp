#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cpdflow/rng.hpp"

namespace cpdflow {

/// A point in data space.
using DVector = std::vector<double>;

/// Dense d x d symmetric matrix, row-major.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t dim, double fill = 0.0) : dim_(dim), data_(dim * dim, fill) {}

  static SymMatrix identity(std::size_t dim, double scale = 1.0);
  static SymMatrix diagonal(std::span<const double> diag);
  /// Builds from row-major entries; throws DimError if not square or not
  /// symmetric within `tol`. The stored matrix is the exact symmetrization.
  static SymMatrix from_rows(std::size_t dim, std::span<const double> rows, double tol = 1e-12);

  std::size_t dim() const noexcept { return dim_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

  /// Writes both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v) {
    data_[i * dim_ + j] = v;
    data_[j * dim_ + i] = v;
  }

  std::span<const double> data() const noexcept { return data_; }

  DVector apply(std::span<const double> x) const;
  SymMatrix scaled(double s) const;
  double max_abs_diff(const SymMatrix& other) const;

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

inline constexpr double kSymTol = 1e-10;
inline constexpr double kCovRidge = 1e-6;

struct EigenResult {
  std::vector<double> values;        // descending
  std::vector<double> vectors;       // row-major d x d, column k is eigenvector k
};

/// Cyclic Jacobi eigendecomposition. Throws Diagnostics if the sweep cap is hit.
EigenResult sym_eigen(const SymMatrix& m);

/// Principal symmetric PSD square root. Eigenvalues in [-kSymTol, 0) are
/// clamped to zero; anything more negative throws NotPSD.
SymMatrix psd_sqrt(const SymMatrix& m);

/// Plain (non-symmetric-assuming) product a*b, used for checks.
std::vector<double> matmul(const SymMatrix& a, const SymMatrix& b);

struct MeanCov {
  DVector mean;
  SymMatrix cov;
};

/// Arithmetic mean and unbiased covariance plus kCovRidge * I.
MeanCov sample_mean_cov(std::span<const DVector> points);

/// mean + sqrt_cov * z with z ~ N(0, I) drawn from rng.
DVector mvn_sample(std::span<const double> mean, const SymMatrix& sqrt_cov, Rng& rng);

DVector standard_normal(std::size_t dim, Rng& rng);

double norm(std::span<const double> x);
double squared_distance(std::span<const double> a, std::span<const double> b);

/// Largest singular value of a row-major rows x cols matrix by power iteration on AᵀA.
double spectral_norm(std::span<const double> a, std::size_t rows, std::size_t cols,
                     int iterations = 500);

}  // namespace cpdflow
