#include "cpdflow/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>

#include "cpdflow/error.hpp"
#include "cpdflow/kernels.hpp"

namespace cpdflow {
namespace {

std::vector<DVector> pooled(std::span<const DVector> x, std::span<const DVector> y) {
  std::vector<DVector> all(x.begin(), x.end());
  all.insert(all.end(), y.begin(), y.end());
  return all;
}

double resolve_bandwidth(std::span<const DVector> x, std::span<const DVector> y, const MmdConfig& cfg) {
  if (cfg.bandwidth) {
    if (!(*cfg.bandwidth > 0)) throw Error(ErrorCode::ConfigError, "MMD bandwidth must be positive");
    return *cfg.bandwidth;
  }
  return median_bandwidth(x, y);
}

double kernel_sum(std::span<const DVector> a, std::span<const DVector> b, double gamma, bool skip_diag) {
  const auto& k = simd::kernels();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (skip_diag && i == j) continue;
      s += std::exp(-gamma * k.sq_dist(a[i].data(), b[j].data(), a[i].size()));
    }
  }
  return s;
}

}  // namespace

double median_bandwidth(std::span<const DVector> x, std::span<const DVector> y) {
  const auto all = pooled(x, y);
  std::vector<double> dists;
  dists.reserve(all.size() * (all.size() - 1) / 2);
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) dists.push_back(std::sqrt(squared_distance(all[i], all[j])));
  if (dists.empty()) return 1.0;
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double med = *mid;
  if (dists.size() % 2 == 0) med = 0.5 * (med + *std::max_element(dists.begin(), mid));
  if (med <= 0.0) {
    std::cerr << "warning: median pairwise distance is 0, using MMD bandwidth 1.0\n";
    return 1.0;
  }
  return med;
}

double mmd2(std::span<const DVector> x, std::span<const DVector> y, const MmdConfig& cfg) {
  if (x.size() < 2 || y.size() < 2) throw Error(ErrorCode::DomainError, "MMD needs at least two samples per side");
  const double bw = resolve_bandwidth(x, y, cfg);
  const double gamma = 1.0 / (2.0 * bw * bw);
  const double m = static_cast<double>(x.size());
  const double n = static_cast<double>(y.size());
  const double kxx = kernel_sum(x, x, gamma, true) / (m * (m - 1));
  const double kyy = kernel_sum(y, y, gamma, true) / (n * (n - 1));
  if (cfg.estimator == MmdEstimator::UnbiasedPaired) {
    if (x.size() != y.size()) throw Error(ErrorCode::DimError, "paired MMD needs equal sample sizes");
    return kxx + kyy - 2.0 * kernel_sum(x, y, gamma, true) / (m * (m - 1));
  }
  return kxx + kyy - 2.0 * kernel_sum(x, y, gamma, false) / (m * n);
}

PermutationTest mmd_permutation_test(std::span<const DVector> x, std::span<const DVector> y, int permutations,
                                     Rng& rng, const MmdConfig& cfg) {
  if (x.size() < 2 || y.size() < 2) throw Error(ErrorCode::DomainError, "MMD needs at least two samples per side");
  const auto all = pooled(x, y);
  const std::size_t N = all.size();
  const std::size_t m = x.size();
  const double bw = resolve_bandwidth(x, y, cfg);
  const double gamma = 1.0 / (2.0 * bw * bw);
  const auto& k = simd::kernels();

  // Zero-diagonal pooled Gram matrix, row sums and total.
  std::vector<double> gram(N * N, 0.0), rows(N, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      const double v = std::exp(-gamma * k.sq_dist(all[i].data(), all[j].data(), all[i].size()));
      gram[i * N + j] = v;
      gram[j * N + i] = v;
    }
  }
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) rows[i] += gram[i * N + j];
    total += rows[i];
  }

  const double dm = static_cast<double>(m), dn = static_cast<double>(N - m);
  // With z the indicator of the first sample: S_xx = zᵀKz, S_xy = zᵀr - S_xx,
  // S_yy = total - 2 S_xy - S_xx.
  std::vector<double> z(N);
  auto statistic = [&](const std::vector<std::size_t>& idx) {
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t a = 0; a < m; ++a) z[idx[a]] = 1.0;
    double sxx = 0.0, zr = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      const std::size_t i = idx[a];
      sxx += k.dot(gram.data() + i * N, z.data(), N);
      zr += rows[i];
    }
    const double sxy = zr - sxx;
    const double syy = total - 2.0 * sxy - sxx;
    return sxx / (dm * (dm - 1)) + syy / (dn * (dn - 1)) - 2.0 * sxy / (dm * dn);
  };

  std::vector<std::size_t> idx(N);
  for (std::size_t i = 0; i < N; ++i) idx[i] = i;
  PermutationTest out;
  out.bandwidth = bw;
  out.statistic = statistic(idx);
  int exceed = 0;
  for (int p = 0; p < permutations; ++p) {
    for (std::size_t i = N; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    if (statistic(idx) >= out.statistic) ++exceed;
  }
  out.p_value = (1.0 + exceed) / (1.0 + permutations);
  return out;
}

double transport_cost(std::span<const std::pair<DVector, DVector>> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyDataset, "transport cost of no pairs");
  double s = 0.0;
  for (const auto& [a, b] : pairs) s += std::sqrt(squared_distance(a, b));
  return s / static_cast<double>(pairs.size());
}

double straightness(const Trajectory& traj) {
  if (traj.size() < 2) throw Error(ErrorCode::DomainError, "straightness needs at least two points");
  double arc = 0.0;
  for (std::size_t i = 1; i < traj.size(); ++i) arc += std::sqrt(squared_distance(traj[i].x, traj[i - 1].x));
  if (arc == 0.0) return 1.0;
  const double chord = std::sqrt(squared_distance(traj.back().x, traj.front().x));
  return std::min(1.0, chord / arc);
}

EvalReport evaluate_model(const FlowModel& model, const ConditionalPrior& prior,
                          std::span<const LabeledSample> targets, const SolverSpec& spec, const EvalConfig& cfg,
                          Rng& rng) {
  if (targets.empty()) throw Error(ErrorCode::EmptyDataset, "no target samples to evaluate against");
  std::map<std::string, std::pair<Condition, std::vector<DVector>>> groups;
  for (const auto& s : targets) {
    auto& g = groups[to_string(s.cond)];
    g.first = s.cond;
    g.second.push_back(s.x1);
  }
  // std::map orders string keys; re-sort discrete ids numerically for stable reports.
  std::vector<std::pair<Condition, std::vector<DVector>>> ordered;
  for (auto& [_, g] : groups) ordered.push_back(std::move(g));
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.first.is_continuous() != b.first.is_continuous()) return !a.first.is_continuous();
    return a.first.is_continuous() ? a.first.angle < b.first.angle : a.first.id < b.first.id;
  });

  const ConditionEncoder encoder(prior, model.cond_embed);
  EvalReport rep;
  double cost_sum = 0.0, straight_sum = 0.0, nfe_sum = 0.0;
  std::size_t total = 0;
  for (const auto& [cond, target] : ordered) {
    std::vector<DVector> gen;
    gen.reserve(cfg.samples_per_condition);
    for (std::size_t i = 0; i < cfg.samples_per_condition; ++i) {
      SampleResult s = sample(model, prior, encoder, cond, spec, rng, cfg.record_trajectories);
      cost_sum += std::sqrt(squared_distance(s.x0, s.endpoint));
      nfe_sum += s.nfe;
      if (s.trajectory) straight_sum += straightness(*s.trajectory);
      gen.push_back(std::move(s.endpoint));
      ++total;
    }
    ConditionReport cr{cond, mmd2(gen, target, cfg.mmd), gen.size(), target.size()};
    rep.mmd2 += cr.mmd2;
    rep.per_condition.push_back(cr);
  }
  rep.mmd2 /= static_cast<double>(rep.per_condition.size());
  if (total > 0) {
    rep.transport_cost = cost_sum / static_cast<double>(total);
    rep.nfe = nfe_sum / static_cast<double>(total);
    if (cfg.record_trajectories) rep.straightness = straight_sum / static_cast<double>(total);
  }
  return rep;
}

}  // namespace cpdflow

namespace cpdflow {

double coupling_transport_cost(std::span<const LabeledSample> data, const ConditionalPrior& prior, Coupling coupling,
                               std::size_t batch_size, Rng& rng) {
  const auto batch = make_batch(data, prior, coupling, batch_size, rng);
  std::vector<std::pair<DVector, DVector>> pairs;
  pairs.reserve(batch.size());
  for (const auto& s : batch) {
    DVector src = s.x0;
    if (coupling == Coupling::ConditionalPrior) {
      const GaussianComponent comp = prior.component(s.cond);
      src = comp.sqrt_cov.apply(s.x0);
      for (std::size_t i = 0; i < src.size(); ++i) src[i] += comp.mean[i];
    }
    pairs.emplace_back(std::move(src), s.x1);
  }
  return transport_cost(pairs);
}

}  // namespace cpdflow
