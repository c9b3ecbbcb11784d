#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpdflow/cond_prior.hpp"
#include "cpdflow/net.hpp"
#include "cpdflow/toy_data.hpp"

namespace cpdflow {

/// How source points are paired with data points during training.
///   Independent      x0 ~ N(0, I), straight-line path (CondOT)
///   MinibatchOT      x0 ~ N(0, I), re-paired within the batch by exact OT (BatchOT)
///   ConditionalPrior base x ~ N(0, I) pushed through the condition's Gaussian (CPD)
enum class Coupling { Independent, MinibatchOT, ConditionalPrior };

std::string to_string(Coupling c);
/// Accepts condot|independent, batchot|minibatch-ot, cpd|conditional-prior.
Coupling parse_coupling(const std::string& name);

struct PathSample {
  double t = 0.0;
  DVector x0;  // CPD: the standardized base point, the realized prior draw is sqrt_cov x0 + mean
  DVector x1;
  Condition cond;
  DVector x_t;
  DVector u_target;
};

/// [t σ_min I + (1 - t) Σ^{1/2}] x + t x1 + (1 - t) μ. Throws DomainError for t outside [0, 1].
DVector cpd_path(std::span<const double> x, std::span<const double> x1, const GaussianComponent& comp,
                 double t, double sigma_min);

/// (σ_min I - Σ^{1/2}) x + x1 - μ, the time derivative of cpd_path.
DVector cpd_velocity(std::span<const double> x, std::span<const double> x1, const GaussianComponent& comp,
                     double sigma_min);

struct PathPoint {
  DVector x_t;
  DVector u_target;
};

/// x_t = (1 - t) x0 + t x1, u = x1 - x0.
PathPoint condot_pair_path(std::span<const double> x0, std::span<const double> x1, double t);

/// Exact minimum-cost assignment under squared Euclidean cost. Result[i] is the
/// target index paired with source i. Among optimal assignments the
/// lexicographically smallest one is returned. Throws DimError on size mismatch.
std::vector<std::size_t> hungarian_pairing(std::span<const DVector> sources, std::span<const DVector> targets);

/// General square cost matrix version (row-major n x n).
std::vector<std::size_t> min_cost_assignment(std::span<const double> cost, std::size_t n);

double pairing_cost(std::span<const DVector> sources, std::span<const DVector> targets,
                    std::span<const std::size_t> perm);

/// Conditioning vector fed to the velocity net: pos_embed of the condition's prior mean.
class ConditionEncoder {
 public:
  ConditionEncoder(const ConditionalPrior& prior, PosEmbedding cfg);

  std::size_t dim() const { return cfg_.output_dim(dim_); }
  DVector encode(const Condition& c) const;

 private:
  const ConditionalPrior* prior_;
  PosEmbedding cfg_;
  std::size_t dim_;
  std::map<int, DVector> cache_;
};

struct BatchOptions {
  std::optional<double> fixed_t;  // forces every t instead of drawing U(0, 1)
  double sigma_min = 1e-2;
};

/// Draws batch_size data points uniformly with replacement and the matching
/// source points for `coupling`, then fills x_t and u_target.
std::vector<PathSample> make_batch(std::span<const LabeledSample> data, const ConditionalPrior& prior,
                                   Coupling coupling, std::size_t batch_size, Rng& rng,
                                   const BatchOptions& opts = {});

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 256;
  /// 0 means ceil(n / batch_size).
  std::size_t steps_per_epoch = 0;
  double lr = 1e-3;
  double sigma_min = 1e-2;
  std::uint64_t seed = 0;
  Coupling coupling = Coupling::ConditionalPrior;
  std::size_t hidden_width = 256;
  std::size_t num_layers = 4;
  PosEmbedding time_embed{};
  PosEmbedding cond_embed{};
  bool record_wall_time = false;
};

/// Everything needed to sample from a trained model.
struct FlowModel {
  VelocityNet net;
  Coupling coupling = Coupling::ConditionalPrior;
  PosEmbedding cond_embed{};
  double sigma_min = 1e-2;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  FlowModel model;
  AdamState adam;
  std::vector<EpochStats> history;
};

/// Mean squared regression loss of the model on a batch, with its gradient.
double batch_loss_and_grad(const VelocityNet& net, std::span<const PathSample> batch,
                           std::span<const DVector> cond_embeds, std::vector<double>& grad);

/// Minimizes E ||v(t, x_t, c) - u_target||^2 with Adam. Deterministic given cfg.seed.
/// Throws NumericalError if the loss becomes non-finite.
TrainResult train(std::span<const LabeledSample> data, const ConditionalPrior& prior, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&, const FlowModel&)>& on_epoch = {});

FlowModel init_model(const ConditionalPrior& prior, const TrainConfig& cfg);

}  // namespace cpdflow
