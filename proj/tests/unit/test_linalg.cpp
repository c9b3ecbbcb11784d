#include <cmath>
#include <numbers>

#include "cpdflow/error.hpp"
#include "cpdflow/linalg.hpp"
#include "doctest.h"

using namespace cpdflow;

namespace {

SymMatrix random_symmetric(std::size_t d, Rng& rng, double lo, double hi) {
  SymMatrix m(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) m.set(i, j, rng.uniform(lo, hi));
  return m;
}

// AᵀA for a random square A.
SymMatrix random_psd(std::size_t d, Rng& rng) {
  std::vector<double> a(d * d);
  for (double& v : a) v = rng.uniform(-2.0, 2.0);
  SymMatrix m(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += a[k * d + i] * a[k * d + j];
      m.set(i, j, s);
    }
  return m;
}

double reconstruction_error(const SymMatrix& m, const EigenResult& e) {
  const std::size_t d = m.dim();
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += e.vectors[i * d + k] * e.values[k] * e.vectors[j * d + k];
      worst = std::max(worst, std::abs(s - m(i, j)));
    }
  return worst;
}

double square_error(const SymMatrix& s, const SymMatrix& m) {
  const auto sq = matmul(s, s);
  double worst = 0.0;
  for (std::size_t k = 0; k < sq.size(); ++k) worst = std::max(worst, std::abs(sq[k] - m.data()[k]));
  return worst;
}

}  // namespace

TEST_CASE("sym_eigen on the identity and diagonal matrices") {
  const auto id = sym_eigen(SymMatrix::identity(2));
  CHECK(id.values[0] == doctest::Approx(1.0));
  CHECK(id.values[1] == doctest::Approx(1.0));

  const double diag[] = {4.0, 9.0};
  const auto e = sym_eigen(SymMatrix::diagonal(diag));
  CHECK(e.values[0] == doctest::Approx(9.0));
  CHECK(e.values[1] == doctest::Approx(4.0));
  // Axis aligned: the leading eigenvector is ±e_y.
  CHECK(std::abs(e.vectors[1 * 2 + 0]) == doctest::Approx(1.0));
  CHECK(std::abs(e.vectors[0 * 2 + 0]) == doctest::Approx(0.0));
}

TEST_CASE("sym_eigen on [[2,1],[1,2]] matches the characteristic polynomial") {
  // λ² - 4λ + 3 = 0 → λ = 3, 1 with eigenvectors (1,1)/√2 and (1,-1)/√2.
  const double rows[] = {2, 1, 1, 2};
  const auto e = sym_eigen(SymMatrix::from_rows(2, rows));
  CHECK(e.values[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(1.0).epsilon(1e-14));
  const double r = 1.0 / std::numbers::sqrt2;
  CHECK(std::abs(e.vectors[0]) == doctest::Approx(r));
  CHECK(e.vectors[0] * e.vectors[2] > 0);  // same sign: (1,1) direction
  CHECK(std::abs(e.vectors[1]) == doctest::Approx(r));
  CHECK(e.vectors[1] * e.vectors[3] < 0);  // (1,-1) direction
}

TEST_CASE("sym_eigen reconstructs random symmetric matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.index(16);
    const SymMatrix m = random_symmetric(d, rng, -10.0, 10.0);
    const auto e = sym_eigen(m);
    CHECK(reconstruction_error(m, e) <= 1e-10);
    for (std::size_t k = 1; k < d; ++k) CHECK(e.values[k - 1] >= e.values[k]);
  }
}

TEST_CASE("psd_sqrt examples") {
  CHECK(psd_sqrt(SymMatrix::identity(3)).max_abs_diff(SymMatrix::identity(3)) < 1e-14);
  const double d49[] = {4.0, 9.0}, d23[] = {2.0, 3.0};
  CHECK(psd_sqrt(SymMatrix::diagonal(d49)).max_abs_diff(SymMatrix::diagonal(d23)) < 1e-14);
  const double rows[] = {2, 1, 1, 2};
  const SymMatrix m = SymMatrix::from_rows(2, rows);
  CHECK(square_error(psd_sqrt(m), m) < 1e-8);
}

TEST_CASE("psd_sqrt clamps tiny negative eigenvalues and rejects real ones") {
  const double tiny[] = {1.0, -1e-12};
  const SymMatrix s = psd_sqrt(SymMatrix::diagonal(tiny));
  CHECK(s(1, 1) == 0.0);
  const double bad[] = {1.0, -1e-3};
  CHECK_THROWS_AS(psd_sqrt(SymMatrix::diagonal(bad)), Error);
  try {
    psd_sqrt(SymMatrix::diagonal(bad));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotPSD);
  }
}

TEST_CASE("property: psd_sqrt squares back to AᵀA") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t d = 1 + rng.index(8);
    const SymMatrix m = random_psd(d, rng);
    const SymMatrix s = psd_sqrt(m);
    CHECK(square_error(s, m) <= 1e-8);
    CHECK(s.max_abs_diff(s) == 0.0);
  }
}

TEST_CASE("sample_mean_cov uses the unbiased estimator with a ridge") {
  const std::vector<DVector> pts{{1, 0}, {3, 0}};
  const auto mc = sample_mean_cov(pts);
  CHECK(mc.mean == DVector{2.0, 0.0});
  // Σ (x - 2)² / (n - 1) = (1 + 1) / 1 = 2.
  CHECK(mc.cov(0, 0) == doctest::Approx(2.0 + kCovRidge).epsilon(1e-15));
  CHECK(mc.cov(1, 1) == doctest::Approx(kCovRidge).epsilon(1e-15));
  CHECK(mc.cov(0, 1) == 0.0);

  const std::vector<DVector> one{{5, 5}};
  const auto single = sample_mean_cov(one);
  CHECK(single.mean == DVector{5.0, 5.0});
  CHECK(single.cov.max_abs_diff(SymMatrix::identity(2, kCovRidge)) == 0.0);

  CHECK_THROWS_AS(sample_mean_cov(std::vector<DVector>{}), Error);
}

TEST_CASE("sample_mean_cov recovers a known covariance (Monte Carlo)") {
  Rng rng(2024);
  const double sd[] = {1.0, 2.0};
  const SymMatrix root = SymMatrix::diagonal(sd);
  std::vector<DVector> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back(mvn_sample(DVector{0, 0}, root, rng));
  const auto mc = sample_mean_cov(pts);
  CHECK(std::abs(mc.cov(0, 0) - 1.0) < 0.15);
  CHECK(std::abs(mc.cov(1, 1) - 4.0) < 0.15);
  CHECK(std::abs(mc.cov(0, 1)) < 0.15);
}

TEST_CASE("property: fitted covariance is symmetric with eigenvalues above the ridge") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(6);  // often n < d: rank-deficient
    const std::size_t d = 1 + rng.index(5);
    std::vector<DVector> pts(n, DVector(d));
    for (auto& p : pts)
      for (double& v : p) v = rng.uniform(-3, 3);
    const auto mc = sample_mean_cov(pts);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) CHECK(mc.cov(i, j) == mc.cov(j, i));
    for (double lambda : sym_eigen(mc.cov).values) CHECK(lambda >= kCovRidge - 1e-12);
  }
}

TEST_CASE("mvn_sample") {
  Rng rng(3);
  SUBCASE("zero square root returns the mean exactly") {
    const DVector mean{1.5, -2.0};
    CHECK(mvn_sample(mean, SymMatrix(2), rng) == mean);
  }
  SUBCASE("standard normal has mean near zero") {
    DVector acc(2, 0.0);
    for (int i = 0; i < 10000; ++i) {
      const DVector x = mvn_sample(DVector{0, 0}, SymMatrix::identity(2), rng);
      acc[0] += x[0];
      acc[1] += x[1];
    }
    CHECK(std::abs(acc[0] / 10000) < 0.05);
    CHECK(std::abs(acc[1] / 10000) < 0.05);
  }
  SUBCASE("scaled draws have the squared covariance") {
    const double sd[] = {2.0, 3.0};
    std::vector<DVector> pts;
    for (int i = 0; i < 10000; ++i) pts.push_back(mvn_sample(DVector{1, 1}, SymMatrix::diagonal(sd), rng));
    const auto mc = sample_mean_cov(pts);
    // 5 standard errors of the variance estimate, sd^2 sqrt(2 / n).
    CHECK(std::abs(mc.cov(0, 0) - 4.0) < 5 * 4.0 * std::sqrt(2.0 / 10000));
    CHECK(std::abs(mc.cov(1, 1) - 9.0) < 5 * 9.0 * std::sqrt(2.0 / 10000));
    CHECK(std::abs(mc.cov(0, 1)) < 5 * 6.0 / 100.0);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(mvn_sample(DVector{0, 0, 0}, SymMatrix::identity(2), rng), Error);
  }
}

TEST_CASE("mvn_sample is bit-reproducible for a fixed seed") {
  const double rows[] = {2, 1, 1, 2};
  const SymMatrix root = psd_sqrt(SymMatrix::from_rows(2, rows));
  Rng a(99), b(99);
  for (int i = 0; i < 1000; ++i) CHECK(mvn_sample(DVector{1, 2}, root, a) == mvn_sample(DVector{1, 2}, root, b));
}

TEST_CASE("Rng stream is pinned to mt19937_64") {
  // [rand.predef]: the 10000th output for the default seed 5489.
  Rng r(5489);
  for (int i = 0; i < 9999; ++i) r.next_u64();
  CHECK(r.next_u64() == 9981545732273789042ULL);
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("spectral_norm by power iteration") {
  const double a[] = {3, 0, 0, 1};
  CHECK(spectral_norm(a, 2, 2) == doctest::Approx(3.0));
  // [[1,2],[3,4]] has largest singular value sqrt(15 + sqrt(221)).
  const double b[] = {1, 2, 3, 4};
  CHECK(spectral_norm(b, 2, 2) == doctest::Approx(std::sqrt(15.0 + std::sqrt(221.0))).epsilon(1e-12));
}
