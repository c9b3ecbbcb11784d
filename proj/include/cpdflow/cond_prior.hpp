#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cpdflow/linalg.hpp"
#include "cpdflow/net.hpp"
#include "cpdflow/toy_data.hpp"

namespace cpdflow {

struct GaussianComponent {
  DVector mean;
  SymMatrix cov;
  SymMatrix sqrt_cov;  // psd_sqrt(cov)

  static GaussianComponent from_cov(DVector mean, SymMatrix cov);
  static GaussianComponent isotropic(DVector mean, double sigma);
};

/// Per-class Gaussians with mixture weights equal to the class frequencies.
struct DiscretePrior {
  std::map<int, GaussianComponent> components;
  std::map<int, double> weights;

  std::size_t dim() const { return components.empty() ? 0 : components.begin()->second.mean.size(); }
  std::vector<int> ids() const;
};

DiscretePrior fit_discrete_prior(const Dataset& data);

/// Replaces every covariance with std^2 I, keeping the fitted means.
DiscretePrior with_isotropic_cov(DiscretePrior prior, double std);

/// Learned map from condition embedding to data space, approximating E[x1 | c].
struct Mapper {
  Mlp mlp;
  DVector operator()(std::span<const double> embedding) const { return mlp.forward(embedding); }
};

struct MapperConfig {
  std::size_t hidden_width = 64;
  std::size_t num_layers = 3;
  int epochs = 200;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  /// Anneals the learning rate to zero over the run with a half cosine.
  bool cosine_decay = true;
  std::uint64_t seed = 0;
};

struct MapperFit {
  Mapper mapper;
  double final_loss = 0.0;  // mean squared error over the full training set
  std::vector<double> epoch_loss;
};

/// Minimizes mean ||P(e) - x1||^2 with Adam over shuffled minibatches.
MapperFit train_mapper(std::span<const DVector> embeddings, std::span<const DVector> targets,
                       const MapperConfig& cfg);

/// Isotropic Gaussian around the mapper output for the angle embedding of the condition.
struct ContinuousPrior {
  Mapper mapper;
  double sigma = 0.7;
};

/// Trains the mapper on the angle embeddings of the Train-split samples.
ContinuousPrior fit_continuous_prior(const Dataset& data, const MapperConfig& cfg, double sigma = 0.7);

class ConditionalPrior {
 public:
  ConditionalPrior() = default;
  ConditionalPrior(DiscretePrior p) : impl_(std::move(p)) {}  // NOLINT(implicit)
  ConditionalPrior(ContinuousPrior p);                        // NOLINT(implicit)

  bool is_discrete() const { return std::holds_alternative<DiscretePrior>(impl_); }
  const DiscretePrior& discrete() const { return std::get<DiscretePrior>(impl_); }
  const ContinuousPrior& continuous() const { return std::get<ContinuousPrior>(impl_); }
  std::size_t dim() const;

  /// Throws UnknownCondition for a discrete id without a component, DimError
  /// when the condition kind does not match the prior.
  GaussianComponent component(const Condition& c) const;

  DVector sample(const Condition& c, Rng& rng) const;

 private:
  std::variant<DiscretePrior, ContinuousPrior> impl_;
};

DVector sample_prior(const ConditionalPrior& prior, const Condition& c, Rng& rng);

/// Draws c with probability π_c, then x0 ~ N(μ_c, Σ_c).
std::pair<DVector, Condition> sample_marginal(const DiscretePrior& prior, Rng& rng);

// Prior file: JSON object
//   {"format": "cpdflow-prior", "version": 1, "mode": "discrete" | "continuous", "dim": d,
//    "components": [{"condition": id, "weight": π, "mean": [...], "cov": [d*d row-major]}],
//    "sigma": σ, "mapper_checkpoint": "<path relative to the prior file>"}
// "components" is present for discrete priors, "sigma"/"mapper_checkpoint" for continuous.
void save_prior(const std::string& path, const ConditionalPrior& prior,
                const std::string& mapper_checkpoint = "");
ConditionalPrior load_prior(const std::string& path);

}  // namespace cpdflow
