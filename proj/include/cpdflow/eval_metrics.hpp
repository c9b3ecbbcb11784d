#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpdflow/cond_prior.hpp"
#include "cpdflow/flow_match.hpp"
#include "cpdflow/linalg.hpp"
#include "cpdflow/ode_solve.hpp"

namespace cpdflow {

enum class MmdEstimator {
  /// Two-sample U-statistic: within-sample sums over i != j, full cross term.
  /// Order invariant; slightly negative for identical sets.
  Unbiased,
  /// Equal-size paired form: mean over i != j of k(x_i,x_j) + k(y_i,y_j)
  /// - k(x_i,y_j) - k(x_j,y_i). Exactly 0 for X == Y elementwise.
  UnbiasedPaired,
};

/// Gaussian RBF kernel exp(-|a - b|^2 / (2 bw^2)). With no fixed bandwidth
/// the median of the pooled pairwise distances is used; a zero median falls
/// back to 1.0.
struct MmdConfig {
  std::optional<double> bandwidth;
  MmdEstimator estimator = MmdEstimator::Unbiased;
};

double median_bandwidth(std::span<const DVector> x, std::span<const DVector> y);

double mmd2(std::span<const DVector> x, std::span<const DVector> y, const MmdConfig& cfg = {});

struct PermutationTest {
  double statistic = 0.0;
  double p_value = 1.0;
  double bandwidth = 0.0;
};

/// Two-sample permutation test on the Unbiased statistic; the bandwidth is
/// fixed from the pooled sample and shared across permutations.
/// p = (1 + #{permuted >= observed}) / (1 + permutations).
PermutationTest mmd_permutation_test(std::span<const DVector> x, std::span<const DVector> y, int permutations,
                                     Rng& rng, const MmdConfig& cfg = {});

/// Mean Euclidean distance over (x0, x1) pairs.
double transport_cost(std::span<const std::pair<DVector, DVector>> pairs);

/// Chord length over arc length; 1.0 for a zero-length path.
double straightness(const Trajectory& trajectory);

struct EvalConfig {
  MmdConfig mmd{};
  std::size_t samples_per_condition = 500;
  bool record_trajectories = false;
};

struct ConditionReport {
  Condition cond;
  double mmd2 = 0.0;
  std::size_t n_generated = 0;
  std::size_t n_target = 0;
};

struct EvalReport {
  double mmd2 = 0.0;  // mean over conditions
  double transport_cost = 0.0;  // mean |endpoint - x0|
  std::optional<double> straightness;
  double nfe = 0.0;  // mean per sample
  std::vector<ConditionReport> per_condition;
};

/// For each condition present in `targets`, generates samples_per_condition
/// samples and compares them to that condition's targets.
EvalReport evaluate_model(const FlowModel& model, const ConditionalPrior& prior,
                          std::span<const LabeledSample> targets, const SolverSpec& spec, const EvalConfig& cfg,
                          Rng& rng);

}  // namespace cpdflow

namespace cpdflow {

/// Mean |x1 - x0| over one training batch of the given coupling, where x0 is
/// the realized source draw (for CPD, sqrt_cov * base + mean).
double coupling_transport_cost(std::span<const LabeledSample> data, const ConditionalPrior& prior, Coupling coupling,
                               std::size_t batch_size, Rng& rng);

}  // namespace cpdflow
