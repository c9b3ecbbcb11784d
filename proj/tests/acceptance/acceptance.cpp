// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cpdflow/cond_prior.hpp"
#include "cpdflow/error.hpp"
#include "cpdflow/eval_metrics.hpp"
#include "cpdflow/flow_match.hpp"
#include "cpdflow/net.hpp"
#include "cpdflow/ode_solve.hpp"
#include "cpdflow/toy_data.hpp"

using namespace cpdflow;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

GaussianComponent random_component(Rng& rng) {
  SymMatrix cov(2);
  const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1), c = rng.uniform(-1, 1);
  cov.set(0, 0, a * a + b * b + 0.01);
  cov.set(0, 1, a * c);
  cov.set(1, 1, c * c + 0.01);
  return GaussianComponent::from_cov({rng.uniform(-5, 5), rng.uniform(-5, 5)}, cov);
}

// Shared training setup for the model-based criteria.
constexpr std::size_t kWidth = 128;
constexpr std::size_t kLayers = 4;

TrainConfig model_config(Coupling c, std::uint64_t seed, int epochs, std::size_t steps) {
  TrainConfig cfg;
  cfg.coupling = c;
  cfg.seed = seed;
  cfg.epochs = epochs;
  cfg.steps_per_epoch = steps;
  cfg.batch_size = 256;
  cfg.hidden_width = kWidth;
  cfg.num_layers = kLayers;
  cfg.lr = 1e-3;
  return cfg;
}

Dataset ring_data(std::uint64_t seed, int n_per_class = 1000) {
  RingSquaresSpec spec;
  spec.seed = seed;
  spec.n_per_class = n_per_class;
  return gen_ring_squares(spec);
}

/// Ring-toy prior: fitted class means with the stated prior std 0.2.
ConditionalPrior ring_prior(const Dataset& data) {
  return ConditionalPrior(with_isotropic_cov(fit_discrete_prior(data), RingSquaresSpec{}.prior_std));
}

// ---------------------------------------------------------------------------

Outcome c1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  // The path is affine in t, so the central difference has no truncation error.
  const double h = 1e-3;
  for (int i = 0; i < 10000; ++i) {
    const auto comp = random_component(rng);
    const DVector x{rng.normal(), rng.normal()}, x1{rng.uniform(-6, 6), rng.uniform(-6, 6)};
    const double t = rng.uniform(h, 1.0 - h);
    const double smin = rng.uniform(0.0, 0.1);
    const auto up = cpd_path(x, x1, comp, t + h, smin);
    const auto down = cpd_path(x, x1, comp, t - h, smin);
    const auto v = cpd_velocity(x, x1, comp, smin);
    for (int k = 0; k < 2; ++k) {
      const double fd = (up[k] - down[k]) / (2 * h);
      worst = std::max(worst, std::abs(fd - v[k]) / std::max(std::abs(v[k]), 1e-12));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 5.0, "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome c2() {
  Rng rng(102);
  const auto std_normal = GaussianComponent::from_cov({0.0, 0.0}, SymMatrix::identity(2));
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const DVector x0{rng.normal(), rng.normal()}, x1{rng.uniform(-6, 6), rng.uniform(-6, 6)};
    const double t = rng.uniform();
    const auto ref = condot_pair_path(x0, x1, t);
    const auto xt = cpd_path(x0, x1, std_normal, t, 0.0);
    const auto u = cpd_velocity(x0, x1, std_normal, 0.0);
    for (int k = 0; k < 2; ++k)
      worst = std::max({worst, std::abs(xt[k] - ref.x_t[k]), std::abs(u[k] - ref.u_target[k])});
  }
  return {worst <= 1e-12, "max abs diff " + fmt("%.2e", worst)};
}

Outcome c3() {
  Rng rng(103);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    VelocityNet::Config nc;
    nc.data_dim = 2;
    nc.cond_dim = 8;
    nc.hidden_width = 6 + rng.index(10);
    nc.num_layers = 3 + rng.index(2);
    nc.time_embed.num_freqs = 3;
    VelocityNet net(nc, rng);
    for (std::size_t l = 0; l < net.mlp().num_layers(); ++l)
      for (double& b : net.mlp().bias(l)) b = rng.uniform(-0.5, 0.5);
    const std::size_t batch = 1 + rng.index(8);
    std::vector<double> in(batch * net.input_dim()), tgt(batch * 2);
    for (std::size_t b = 0; b < batch; ++b) {
      DVector x{rng.normal(), rng.normal()}, c(nc.cond_dim);
      for (double& v : c) v = rng.uniform(-1, 1);
      net.build_input(rng.uniform(), x, c, std::span<double>(in).subspan(b * net.input_dim(), net.input_dim()));
      tgt[2 * b] = rng.normal();
      tgt[2 * b + 1] = rng.normal();
    }
    std::vector<double> g;
    net.mlp().mse_loss_and_grad(in, tgt, batch, g);
    Mlp probe = net.mlp();
    const double h = 1e-6;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double keep = probe.params()[i];
      probe.params()[i] = keep + h;
      const double up = probe.mse_loss(in, tgt, batch);
      probe.params()[i] = keep - h;
      const double down = probe.mse_loss(in, tgt, batch);
      probe.params()[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-6}));
    }
  }
  return {worst < 1e-4, "max rel err " + fmt("%.2e", worst) + " over 20 nets"};
}

Outcome c4() {
  const Dataset data = ring_data(104);
  const ConditionalPrior prior = ring_prior(data);
  Rng rng(1040);
  BatchOptions opts;
  opts.fixed_t = 0.0;
  std::vector<DVector> coupled, marginal;
  for (const auto& s : make_batch(data, prior, Coupling::ConditionalPrior, 2000, rng, opts)) coupled.push_back(s.x_t);
  for (int i = 0; i < 2000; ++i) marginal.push_back(sample_marginal(prior.discrete(), rng).first);
  const auto test = mmd_permutation_test(coupled, marginal, 200, rng);
  return {test.p_value > 0.01, "p = " + fmt("%.3f", test.p_value) + ", mmd2 = " + fmt("%.2e", test.statistic)};
}

Outcome c5() {
  Rng rng(105);
  int mismatches = 0, above_identity = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(7);
    std::vector<DVector> src, dst;
    for (std::size_t i = 0; i < n; ++i) {
      src.push_back({rng.normal(), rng.normal()});
      dst.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3)});
    }
    const auto perm = hungarian_pairing(src, dst);
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    const double identity = pairing_cost(src, dst, p);
    double best = INFINITY;
    do {
      best = std::min(best, pairing_cost(src, dst, p));
    } while (std::next_permutation(p.begin(), p.end()));
    const double got = pairing_cost(src, dst, perm);
    if (std::abs(got - best) > 1e-12 * std::max(1.0, best)) ++mismatches;
    if (got > identity + 1e-12) ++above_identity;
  }
  return {mismatches == 0 && above_identity == 0,
          std::to_string(mismatches) + " brute-force mismatches, " + std::to_string(above_identity) +
              " above identity, 200 instances"};
}

Outcome c6() {
  double sum[3] = {0, 0, 0};
  const Coupling order[3] = {Coupling::ConditionalPrior, Coupling::MinibatchOT, Coupling::Independent};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Dataset data = ring_data(600 + seed);
    const ConditionalPrior prior = ring_prior(data);
    for (int k = 0; k < 3; ++k) {
      Rng rng(6000 + seed);
      sum[k] += coupling_transport_cost(data, prior, order[k], 256, rng) / 20.0;
    }
  }
  const double gap1 = (sum[1] - sum[0]) / sum[1], gap2 = (sum[2] - sum[1]) / sum[2];
  return {gap1 >= 0.05 && gap2 >= 0.05,
          "cpd " + fmt("%.3f", sum[0]) + " < batchot " + fmt("%.3f", sum[1]) + " < independent " +
              fmt("%.3f", sum[2]) + " (gaps " + fmt("%.1f%%", 100 * gap1) + ", " + fmt("%.1f%%", 100 * gap2) + ")"};
}

/// Mean over `nfes` of the per-condition-averaged mmd2 at Euler NFE.
double mean_mmd_over_nfe(const FlowModel& model, const ConditionalPrior& prior, const Dataset& targets,
                         const std::vector<int>& nfes, std::size_t n, std::uint64_t seed) {
  double total = 0.0;
  for (int nfe : nfes) {
    Rng rng(seed);
    EvalConfig ecfg;
    ecfg.samples_per_condition = n;
    total += evaluate_model(model, prior, targets, EulerSpec{nfe}, ecfg, rng).mmd2;
  }
  return total / static_cast<double>(nfes.size());
}

Outcome c7() {
  const auto t0 = Clock::now();
  int wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset data = ring_data(700 + seed);
    const Dataset targets = ring_data(7000 + seed, 500);
    const ConditionalPrior prior = ring_prior(data);
    double m[2];
    const Coupling cs[2] = {Coupling::ConditionalPrior, Coupling::Independent};
    for (int k = 0; k < 2; ++k) {
      const auto r = train(data, prior, model_config(cs[k], seed, 1, 1500));
      m[k] = mean_mmd_over_nfe(r.model, prior, targets, {4, 6, 8}, 500, 70000 + seed);
    }
    wins += m[0] < m[1];
    detail << (seed ? "; " : "") << fmt("%.4f", m[0]) << " vs " << fmt("%.4f", m[1]);
  }
  const double secs = seconds_since(t0);
  return {wins >= 4 && secs <= 900.0,
          "cpd wins " + std::to_string(wins) + "/5 (" + detail.str() + "), " + fmt("%.0f", secs) + " s"};
}

// 360 points per line, standardized together; the first 60 of each line train,
// the other 300 are held-out targets.
std::pair<Dataset, Dataset> synthetic_vlines(std::uint64_t seed) {
  std::stringstream ss;
  write_synthetic_vlines_csv(ss, 6, 360, seed);
  const Dataset all = read_vlines_csv(ss);
  Dataset train_set, held;
  for (std::size_t i = 0; i < all.size(); ++i) ((i % 360) < 60 ? train_set : held).push_back(all[i]);
  return {std::move(train_set), std::move(held)};
}

Outcome c8() {
  int wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [data, held] = synthetic_vlines(800 + seed);
    const ConditionalPrior prior(fit_discrete_prior(data));
    double m[2];
    const Coupling cs[2] = {Coupling::ConditionalPrior, Coupling::Independent};
    for (int k = 0; k < 2; ++k) {
      const auto r = train(data, prior, model_config(cs[k], seed, 1, 1500));
      EvalConfig ec;
      ec.samples_per_condition = 900;
      ec.mmd.bandwidth = 0.25;  // below the standardized line spacing
      Rng rng(80000 + seed);
      m[k] = evaluate_model(r.model, prior, held, EulerSpec{400}, ec, rng).mmd2;
    }
    wins += m[0] < m[1];
    detail << (seed ? "; " : "") << fmt("%.4f", m[0]) << " vs " << fmt("%.4f", m[1]);
  }
  return {wins >= 4, "cpd wins " + std::to_string(wins) + "/5 (" + detail.str() + ")"};
}

Outcome c9() {
  const Dataset data = ring_data(900);
  const ConditionalPrior prior = ring_prior(data);
  double nfe[2];
  const Coupling cs[2] = {Coupling::ConditionalPrior, Coupling::Independent};
  for (int k = 0; k < 2; ++k) {
    const auto r = train(data, prior, model_config(cs[k], 9, 1, 1500));
    const ConditionEncoder enc(prior, r.model.cond_embed);
    Rng rng(9000);
    double total = 0.0;
    for (int i = 0; i < 200; ++i) {
      const Condition c = Condition::discrete(static_cast<int>(rng.index(8)));
      total += sample(r.model, prior, enc, c, Dopri5Spec{}, rng).nfe;
    }
    nfe[k] = total / 200.0;
  }
  return {nfe[0] < nfe[1], "mean dopri5 NFE cpd " + fmt("%.1f", nfe[0]) + " vs condot " + fmt("%.1f", nfe[1])};
}

Outcome c10() {
  AngleSpec spec;
  spec.seed = 10;
  spec.k_train = 32;
  const Dataset data = gen_angle_conditioned(spec);
  MapperConfig mc;
  mc.seed = 10;
  mc.hidden_width = 128;
  mc.epochs = 2000;
  mc.lr = 3e-3;
  const ContinuousPrior cp = fit_continuous_prior(data, mc);
  const ConditionalPrior prior(cp);

  double worst_center = 0.0;
  std::set<double> test_angles, train_angles;
  for (const auto& s : data) (s.split == Split::Test ? test_angles : train_angles).insert(s.cond.angle);
  for (double a : test_angles) {
    const DVector truth{spec.radius * std::cos(a), spec.radius * std::sin(a)};
    worst_center = std::max(worst_center, std::sqrt(squared_distance(cp.mapper(angle_embedding(a)), truth)));
  }

  Dataset train_split, test_split;
  for (const auto& s : data) (s.split == Split::Train ? train_split : test_split).push_back(s);
  TrainConfig tc = model_config(Coupling::ConditionalPrior, 10, 1, 1500);
  // Low-frequency embedding of the predicted mean so the net interpolates between training angles.
  tc.cond_embed = PosEmbedding{2, 2.0, 0.5};
  const auto r = train(train_split, prior, tc);
  const double m_train = mean_mmd_over_nfe(r.model, prior, train_split, {8}, 200, 100);
  const double m_test = mean_mmd_over_nfe(r.model, prior, test_split, {8}, 200, 101);
  const bool ok = worst_center < 3 * spec.noise_std && m_test <= 2 * m_train;
  return {ok, "max center err " + fmt("%.3f", worst_center) + " (limit " + fmt("%.2f", 3 * spec.noise_std) +
                  "), held-out mmd2 " + fmt("%.4f", m_test) + " vs train " + fmt("%.4f", m_train)};
}

Outcome c11() {
  const Field f = [](double, std::span<const double> x) { return DVector(x.begin(), x.end()); };
  const double e = std::exp(1.0);
  const double err8 = std::abs(integrate(f, DVector{1.0}, Rk4Spec{8}).endpoint[0] - e);
  const double err16 = std::abs(integrate(f, DVector{1.0}, Rk4Spec{16}).endpoint[0] - e);
  const double ratio = err8 / err16;
  const double dp = std::abs(integrate(f, DVector{1.0}, Dopri5Spec{}).endpoint[0] - e);
  return {ratio >= 12 && ratio <= 20 && dp <= 1e-5,
          "rk4 ratio " + fmt("%.2f", ratio) + ", dopri5 error " + fmt("%.2e", dp)};
}

Outcome c12() {
  Rng rng(12);
  std::vector<double> a(4);
  for (double& v : a) v = rng.uniform(-1, 1);
  const Field lin = [&](double, std::span<const double> x) {
    return DVector{a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]};
  };
  const double norm = spectral_norm(a, 2, 2);
  bool ok = true;
  std::ostringstream detail;
  detail << "|A| " << fmt("%.4f", norm);
  for (double h : {0.1, 0.05}) {
    const int n = static_cast<int>(std::lround(1.0 / h));
    std::vector<Trajectory> trajs;
    std::vector<Trajectory> exact;
    for (int i = 0; i < 8; ++i) {
      const DVector x0{rng.normal(), rng.normal()};
      trajs.push_back(*integrate(lin, x0, EulerSpec{n}, true).trajectory);
      exact.push_back(*integrate(lin, x0, Rk4Spec{n * 64}, true).trajectory);
    }
    const auto rep = truncation_diagnostics(lin, trajs, h, 12);
    const double rel = std::abs(rep.lipschitz - norm) / norm;
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i < trajs.size(); ++i)
      for (int k = 1; k <= n; ++k) {
        const double err = std::sqrt(squared_distance(trajs[i][k].x, exact[i][k * 64].x));
        const double bound = rep.bound[k].second;
        if (err > bound) ok = false;
        worst_ratio = std::max(worst_ratio, err / bound);
      }
    ok = ok && rel <= 0.05;
    detail << "; h=" << h << ": L " << fmt("%.4f", rep.lipschitz) << " (" << fmt("%.2f%%", 100 * rel)
           << "), max err/bound " << fmt("%.3f", worst_ratio);
  }
  return {ok, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"path/field consistency", c1},
      {"reduction identity", c2},
      {"gradient correctness", c3},
      {"boundary condition (marginal)", c4},
      {"OT optimality", c5},
      {"transport-cost ordering", c6},
      {"NFE-efficiency ordering", c7},
      {"VLines ordering", c8},
      {"adaptive-NFE trend", c9},
      {"generalization to unseen conditions", c10},
      {"solver orders", c11},
      {"truncation diagnostics", c12},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("CRITERION %2d %s: %s -- %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
