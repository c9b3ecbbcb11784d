#include <algorithm>
#include <cmath>
#include <filesystem>

#include "cpdflow/cond_prior.hpp"
#include "cpdflow/error.hpp"
#include "cpdflow/eval_metrics.hpp"
#include "doctest.h"

using namespace cpdflow;

namespace {

Dataset two_points() {
  return {{{0.0, 0.0}, Condition::discrete(0)}, {{10.0, 0.0}, Condition::discrete(1)}};
}

}  // namespace

TEST_CASE("fit_discrete_prior on single-sample classes") {
  const DiscretePrior p = fit_discrete_prior(two_points());
  REQUIRE(p.components.size() == 2);
  CHECK(p.components.at(0).mean == DVector{0.0, 0.0});
  CHECK(p.components.at(1).mean == DVector{10.0, 0.0});
  CHECK(p.weights.at(0) == 0.5);
  CHECK(p.weights.at(1) == 0.5);
  CHECK(p.components.at(0).cov.max_abs_diff(SymMatrix::identity(2, kCovRidge)) == 0.0);
  CHECK(p.components.at(0).sqrt_cov(0, 0) == doctest::Approx(std::sqrt(kCovRidge)));
  CHECK_THROWS_AS(fit_discrete_prior(Dataset{}), Error);
}

TEST_CASE("fit_discrete_prior weights are class frequencies") {
  Dataset d;
  for (int i = 0; i < 900; ++i) d.push_back({{0.0, 1.0 * i}, Condition::discrete(0)});
  for (int i = 0; i < 100; ++i) d.push_back({{5.0, 1.0 * i}, Condition::discrete(1)});
  const auto p = fit_discrete_prior(d);
  CHECK(p.weights.at(0) == doctest::Approx(0.9));
  CHECK(p.weights.at(1) == doctest::Approx(0.1));
  double sum = 0.0;
  for (const auto& [_, w] : p.weights) sum += w;
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("fit_discrete_prior recovers ring centers") {
  // Gaussian ring with std 0.2, 1000 per class: 3σ/√n ≈ 0.019 < 0.02.
  Rng rng(77);
  Dataset d;
  RingSquaresSpec spec;
  for (int c = 0; c < 8; ++c) {
    const DVector center = ring_center(spec, c);
    for (int i = 0; i < 1000; ++i)
      d.push_back({{center[0] + 0.2 * rng.normal(), center[1] + 0.2 * rng.normal()}, Condition::discrete(c)});
  }
  const auto p = fit_discrete_prior(d);
  for (int c = 0; c < 8; ++c) {
    const DVector center = ring_center(spec, c);
    CHECK(std::sqrt(squared_distance(p.components.at(c).mean, center)) < 0.02 * std::sqrt(2.0));
    CHECK(std::abs(p.components.at(c).mean[0] - center[0]) < 0.02);
    CHECK(std::abs(p.components.at(c).mean[1] - center[1]) < 0.02);
  }
}

TEST_CASE("fit_discrete_prior is invariant to dataset order") {
  RingSquaresSpec spec;
  spec.n_per_class = 50;
  Dataset d = gen_ring_squares(spec);
  const auto a = fit_discrete_prior(d);
  Rng rng(1);
  for (std::size_t i = d.size(); i > 1; --i) std::swap(d[i - 1], d[rng.index(i)]);
  const auto b = fit_discrete_prior(d);
  for (const auto& [id, comp] : a.components) {
    CHECK(comp.mean == b.components.at(id).mean);
    CHECK(comp.cov == b.components.at(id).cov);
    CHECK(a.weights.at(id) == b.weights.at(id));
  }
}

TEST_CASE("prior_component") {
  const ConditionalPrior disc(fit_discrete_prior(two_points()));
  CHECK(disc.component(Condition::discrete(0)).mean == DVector{0.0, 0.0});
  try {
    disc.component(Condition::discrete(25));
    FAIL("expected UnknownCondition");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownCondition);
  }

  Rng rng(0);
  const ConditionalPrior cont(ContinuousPrior{Mapper{Mlp({4, 8, 2}, rng)}, 0.7});
  const auto comp = cont.component(Condition::continuous(1.0));
  CHECK(comp.cov(0, 0) == doctest::Approx(0.49));
  CHECK(comp.cov(1, 1) == doctest::Approx(0.49));
  CHECK(comp.cov(0, 1) == 0.0);
  CHECK(comp.mean == cont.continuous().mapper(angle_embedding(1.0)));
  CHECK_THROWS_AS(cont.component(Condition::discrete(1)), Error);
  CHECK_THROWS_AS(ConditionalPrior(ContinuousPrior{Mapper{Mlp({4, 2})}, 0.0}), Error);
}

TEST_CASE("sample_prior") {
  Rng rng(5);
  SUBCASE("zero covariance returns the mean") {
    DiscretePrior p;
    p.components.emplace(3, GaussianComponent::from_cov({2.0, -1.0}, SymMatrix(2)));
    p.weights.emplace(3, 1.0);
    const ConditionalPrior prior(p);
    CHECK(sample_prior(prior, Condition::discrete(3), rng) == DVector{2.0, -1.0});
  }
  SUBCASE("empirical mean of 10000 draws") {
    DiscretePrior p;
    p.components.emplace(0, GaussianComponent::from_cov({2.0, 0.0}, SymMatrix::identity(2, 0.04)));
    p.weights.emplace(0, 1.0);
    const ConditionalPrior prior(p);
    DVector acc{0.0, 0.0};
    for (int i = 0; i < 10000; ++i) {
      const auto x = prior.sample(Condition::discrete(0), rng);
      acc[0] += x[0];
      acc[1] += x[1];
    }
    CHECK(std::abs(acc[0] / 10000 - 2.0) < 0.01);
    CHECK(std::abs(acc[1] / 10000) < 0.01);
  }
  SUBCASE("fixed seed is reproducible") {
    const ConditionalPrior prior(fit_discrete_prior(gen_ring_squares({})));
    Rng a(8), b(8);
    for (int i = 0; i < 100; ++i) CHECK(prior.sample(Condition::discrete(i % 8), a) == prior.sample(Condition::discrete(i % 8), b));
  }
}

TEST_CASE("continuous prior with tiny sigma collapses onto the mapper output") {
  Rng rng(2);
  const double sigma = 1e-4;
  const ConditionalPrior prior(ContinuousPrior{Mapper{Mlp({4, 16, 2}, rng)}, sigma});
  for (int i = 0; i < 1000; ++i) {
    const double angle = rng.uniform(0.0, 6.283);
    const auto center = prior.continuous().mapper(angle_embedding(angle));
    const auto x = prior.sample(Condition::continuous(angle), rng);
    CHECK(std::abs(x[0] - center[0]) <= 5 * sigma);
    CHECK(std::abs(x[1] - center[1]) <= 5 * sigma);
  }
}

TEST_CASE("sample_marginal") {
  Rng rng(13);
  SUBCASE("all weight on one class") {
    DiscretePrior p = fit_discrete_prior(two_points());
    p.weights[0] = 1.0;
    p.weights[1] = 0.0;
    for (int i = 0; i < 200; ++i) CHECK(sample_marginal(p, rng).second.id == 0);
  }
  SUBCASE("balanced counts are within three binomial standard deviations") {
    const DiscretePrior p = fit_discrete_prior(two_points());
    int zeros = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) zeros += sample_marginal(p, rng).second.id == 0;
    CHECK(std::abs(zeros - 5000) <= 3.0 * std::sqrt(n * 0.25));
  }
  SUBCASE("marginal cloud matches per-condition sampling mixed by weight") {
    RingSquaresSpec spec;
    spec.n_per_class = 100;
    const DiscretePrior p = fit_discrete_prior(gen_ring_squares(spec));
    const ConditionalPrior prior(p);
    std::vector<DVector> marginal, mixed;
    for (int i = 0; i < 400; ++i) marginal.push_back(sample_marginal(p, rng).first);
    for (int i = 0; i < 400; ++i) mixed.push_back(prior.sample(Condition::discrete(static_cast<int>(rng.index(8))), rng));
    const auto test = mmd_permutation_test(marginal, mixed, 200, rng);
    CHECK(test.p_value > 0.01);
  }
}

TEST_CASE("train_mapper") {
  SUBCASE("linear targets are fit to near zero loss") {
    Rng rng(21);
    const double A[2][4] = {{1.0, -0.5, 0.3, 0.0}, {0.2, 0.8, -0.4, 0.6}};
    std::vector<DVector> e, x;
    for (int i = 0; i < 256; ++i) {
      const DVector emb = angle_embedding(rng.uniform(0.0, 6.2831853));
      DVector y(2, 0.0);
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) y[r] += A[r][c] * emb[c];
      e.push_back(emb);
      x.push_back(y);
    }
    MapperConfig cfg;
    cfg.epochs = 1500;
    cfg.batch_size = 64;
    cfg.lr = 3e-3;
    const auto fit = train_mapper(e, x, cfg);
    CHECK(fit.final_loss < 1e-4);
  }
  SUBCASE("constant target") {
    std::vector<DVector> e, x;
    Rng rng(4);
    for (int i = 0; i < 128; ++i) {
      e.push_back(angle_embedding(rng.uniform(0.0, 6.28)));
      x.push_back({1.5, -0.5});
    }
    MapperConfig cfg;
    cfg.epochs = 400;
    cfg.batch_size = 32;
    cfg.lr = 3e-3;
    const auto fit = train_mapper(e, x, cfg);
    CHECK(fit.final_loss < 1e-4);
    // rms error is below 0.01; allow 5x that at any single angle.
    for (double a = 0.0; a < 6.28; a += 0.25) {
      const auto y = fit.mapper(angle_embedding(a));
      CHECK(std::abs(y[0] - 1.5) < 0.05);
      CHECK(std::abs(y[1] + 0.5) < 0.05);
    }
  }
  SUBCASE("noisy targets converge to the noise floor") {
    // E ||noise||^2 = d * 0.1^2 = 0.02 for d = 2.
    Rng rng(31);
    std::vector<DVector> e, x;
    for (int i = 0; i < 2000; ++i) {
      const double a = rng.uniform(0.0, 6.2831853);
      const DVector emb = angle_embedding(a);
      e.push_back(emb);
      x.push_back({emb[0] + 0.5 * emb[3] + 0.1 * rng.normal(), emb[1] - emb[2] + 0.1 * rng.normal()});
    }
    MapperConfig cfg;
    cfg.epochs = 150;
    cfg.batch_size = 128;
    cfg.lr = 3e-3;
    const auto fit = train_mapper(e, x, cfg);
    CHECK(fit.final_loss == doctest::Approx(0.02).epsilon(0.2));
  }
}

TEST_CASE("prior file round trip") {
  const std::string path = (std::filesystem::temp_directory_path() / "cpdflow_prior_roundtrip.json").string();
  const ConditionalPrior prior(fit_discrete_prior(gen_ring_squares({})));
  save_prior(path, prior);
  const ConditionalPrior back = load_prior(path);
  REQUIRE(back.is_discrete());
  for (const auto& [id, comp] : prior.discrete().components) {
    CHECK(back.discrete().components.at(id).mean == comp.mean);
    CHECK(back.discrete().components.at(id).cov == comp.cov);
    CHECK(back.discrete().weights.at(id) == prior.discrete().weights.at(id));
  }
  CHECK_THROWS_AS(load_prior("does_not_exist.json"), Error);
  std::filesystem::remove(path);
}
