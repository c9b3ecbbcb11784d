#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cpdflow/cond_prior.hpp"
#include "cpdflow/flow_match.hpp"
#include "cpdflow/linalg.hpp"

namespace cpdflow {

struct EulerSpec {
  int n_steps = 8;
};

struct Rk4Spec {
  int n_steps = 8;
};

/// Dormand-Prince 5(4), FSAL. Step control: PI controller with safety 0.9,
/// exponents alpha = 0.2 - 0.75 beta, beta = 0.04, step factor clamped to
/// [0.2, 10] (never grows right after a rejection).
struct Dopri5Spec {
  double atol = 1e-5;
  double rtol = 1e-5;
  double h_init = 0.05;
  int max_steps = 100000;  // accepted + rejected
};

using SolverSpec = std::variant<EulerSpec, Rk4Spec, Dopri5Spec>;

std::string describe(const SolverSpec& spec);
/// Expected NFE of a fixed-step spec; nullopt for adaptive.
std::optional<int> fixed_nfe(const SolverSpec& spec);

using Field = std::function<DVector(double, std::span<const double>)>;

struct TrajectoryPoint {
  double t = 0.0;
  DVector x;
};

using Trajectory = std::vector<TrajectoryPoint>;

struct SolveResult {
  DVector endpoint;
  int nfe = 0;
  std::optional<Trajectory> trajectory;
  int accepted = 0;
  int rejected = 0;
};

/// Integrates dx/dt = field(t, x) from t = 0 to t = 1. For Dopri5,
/// nfe == 1 + 6 (accepted + rejected). Throws NumericalError on a non-finite
/// field value and StepLimitExceeded past max_steps.
SolveResult integrate(const Field& field, std::span<const double> x0, const SolverSpec& spec,
                      bool record_trajectory = false);

struct SampleResult {
  DVector x0;
  DVector endpoint;
  int nfe = 0;
  std::optional<Trajectory> trajectory;
};

/// Field of a trained model for one condition.
Field model_field(const FlowModel& model, DVector cond_embed);

/// Draws x0 from the condition's prior (CPD models) or N(0, I), then solves the
/// learned ODE. `encoder` must have been built from `prior` with model.cond_embed.
SampleResult sample(const FlowModel& model, const ConditionalPrior& prior, const ConditionEncoder& encoder,
                    const Condition& cond, const SolverSpec& spec, Rng& rng, bool record_trajectory = false);

struct TruncationReport {
  double lipschitz = 0.0;  // L estimate
  double tau_max = 0.0;    // largest estimated local Euler error
  double h = 0.0;
  std::vector<std::pair<double, double>> bound;  // (t_n, bound on |e_n|), t_n = n h
};

/// L is the largest difference quotient over pairs of points at equal time
/// (pairs across trajectories plus small probes in random directions around
/// each trajectory point). The local Euler error at each point is estimated by
/// step doubling, and the global bound is
///   |e_n| <= max tau / (h L) * (exp(L t_n) - 1)   (tau_max t_n / h when L = 0).
TruncationReport truncation_diagnostics(const Field& field, std::span<const Trajectory> trajectories, double h,
                                        std::uint64_t probe_seed = 0);

}  // namespace cpdflow
