#include "cpdflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cpdflow/error.hpp"

namespace cpdflow {

SymMatrix SymMatrix::identity(std::size_t dim, double scale) {
  SymMatrix m(dim);
  for (std::size_t i = 0; i < dim; ++i) m.data_[i * dim + i] = scale;
  return m;
}

SymMatrix SymMatrix::diagonal(std::span<const double> diag) {
  SymMatrix m(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m.data_[i * diag.size() + i] = diag[i];
  return m;
}

SymMatrix SymMatrix::from_rows(std::size_t dim, std::span<const double> rows, double tol) {
  if (rows.size() != dim * dim) {
    throw Error(ErrorCode::DimError, "expected " + std::to_string(dim * dim) + " entries, got " +
                                         std::to_string(rows.size()));
  }
  SymMatrix m(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i; j < dim; ++j) {
      const double a = rows[i * dim + j];
      const double b = rows[j * dim + i];
      if (std::abs(a - b) > tol) throw Error(ErrorCode::DimError, "matrix is not symmetric");
      m.set(i, j, 0.5 * (a + b));
    }
  }
  return m;
}

DVector SymMatrix::apply(std::span<const double> x) const {
  if (x.size() != dim_) throw Error(ErrorCode::DimError, "matrix-vector dimension mismatch");
  DVector out(dim_, 0.0);
  for (std::size_t i = 0; i < dim_; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) acc += data_[i * dim_ + j] * x[j];
    out[i] = acc;
  }
  return out;
}

SymMatrix SymMatrix::scaled(double s) const {
  SymMatrix m = *this;
  for (double& v : m.data_) v *= s;
  return m;
}

double SymMatrix::max_abs_diff(const SymMatrix& other) const {
  if (other.dim_ != dim_) throw Error(ErrorCode::DimError, "matrix dimension mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < data_.size(); ++k)
    worst = std::max(worst, std::abs(data_[k] - other.data_[k]));
  return worst;
}

EigenResult sym_eigen(const SymMatrix& m) {
  const std::size_t n = m.dim();
  std::vector<double> a(m.data().begin(), m.data().end());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(s);
  };
  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));

  constexpr int kMaxSweeps = 100;
  bool converged = n < 2;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    if (off_norm() <= 1e-15 * std::max(scale, 1e-300)) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        // Rutishauser's stable rotation.
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged && off_norm() > 1e-12 * std::max(scale, 1.0)) {
    throw Error(ErrorCode::Diagnostics, "Jacobi eigensolver did not converge in " +
                                            std::to_string(kMaxSweeps) + " sweeps");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
  EigenResult out;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a[order[k] * n + order[k]];
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + k] = v[i * n + order[k]];
  }
  return out;
}

SymMatrix psd_sqrt(const SymMatrix& m) {
  const std::size_t n = m.dim();
  const EigenResult eig = sym_eigen(m);
  std::vector<double> root(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lambda = eig.values[k];
    if (lambda < -kSymTol) {
      throw Error(ErrorCode::NotPSD, "eigenvalue " + std::to_string(lambda) + " below -tol");
    }
    root[k] = std::sqrt(std::max(lambda, 0.0));
  }
  SymMatrix s(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += eig.vectors[i * n + k] * root[k] * eig.vectors[j * n + k];
      s.set(i, j, acc);
    }
  }
  return s;
}

std::vector<double> matmul(const SymMatrix& a, const SymMatrix& b) {
  const std::size_t n = a.dim();
  if (b.dim() != n) throw Error(ErrorCode::DimError, "matmul dimension mismatch");
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += a(i, k) * b(k, j);
      out[i * n + j] = acc;
    }
  return out;
}

MeanCov sample_mean_cov(std::span<const DVector> points) {
  if (points.empty()) throw Error(ErrorCode::EmptyClass, "cannot estimate statistics of an empty set");
  const std::size_t d = points.front().size();
  const std::size_t n = points.size();
  DVector mean(d, 0.0);
  for (const DVector& p : points) {
    if (p.size() != d) throw Error(ErrorCode::DimError, "inconsistent point dimension");
    for (std::size_t i = 0; i < d; ++i) mean[i] += p[i];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  SymMatrix cov(d);
  if (n > 1) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        double acc = 0.0;
        for (const DVector& p : points) acc += (p[i] - mean[i]) * (p[j] - mean[j]);
        cov.set(i, j, acc / static_cast<double>(n - 1));
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) cov.set(i, i, cov(i, i) + kCovRidge);
  return {std::move(mean), std::move(cov)};
}

DVector standard_normal(std::size_t dim, Rng& rng) {
  DVector z(dim);
  for (double& v : z) v = rng.normal();
  return z;
}

DVector mvn_sample(std::span<const double> mean, const SymMatrix& sqrt_cov, Rng& rng) {
  if (sqrt_cov.dim() != mean.size()) {
    throw Error(ErrorCode::DimError, "mean has dimension " + std::to_string(mean.size()) +
                                         " but sqrt_cov is " + std::to_string(sqrt_cov.dim()));
  }
  const DVector z = standard_normal(mean.size(), rng);
  DVector out = sqrt_cov.apply(z);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += mean[i];
  return out;
}

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimError, "distance between vectors of unequal size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

double spectral_norm(std::span<const double> a, std::size_t rows, std::size_t cols, int iterations) {
  if (a.size() != rows * cols) throw Error(ErrorCode::DimError, "spectral_norm shape mismatch");
  if (rows == 0 || cols == 0) return 0.0;
  std::vector<double> v(cols), av(rows);
  // Deterministic, non-degenerate start vector.
  for (std::size_t j = 0; j < cols; ++j) v[j] = 1.0 + 0.1 * static_cast<double>(j % 7);
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double vn = norm(v);
    if (vn == 0.0) return 0.0;
    for (double& x : v) x /= vn;
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += a[i * cols + j] * v[j];
      av[i] = acc;
    }
    sigma = norm(av);
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) v[j] += a[i * cols + j] * av[i];
  }
  return sigma;
}

}  // namespace cpdflow
