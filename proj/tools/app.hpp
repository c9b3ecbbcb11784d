#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cpdflow/cond_prior.hpp"
#include "cpdflow/eval_metrics.hpp"
#include "cpdflow/flow_match.hpp"
#include "cpdflow/ode_solve.hpp"
#include "cpdflow/toy_data.hpp"

namespace cpdflow::app {

enum class DatasetKind { Ring, VLines, Angle, File };

struct DatasetSection {
  DatasetKind kind = DatasetKind::Ring;
  RingSquaresSpec ring{};
  std::vector<int> holdout;  // ring: classes moved to the test split
  std::filesystem::path path;  // vlines / file
  VLinesRule vlines{};
  AngleSpec angle{};
  std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct PriorSection {
  std::string mode = "discrete";  // discrete | continuous
  double sigma = 0.7;
  MapperConfig mapper{};
  std::optional<double> isotropic_std;  // discrete: replace fitted covariances with std^2 I
};

struct EvalSection {
  std::size_t samples_per_condition = 500;
  std::optional<double> bandwidth;
  MmdEstimator estimator = MmdEstimator::Unbiased;
  std::vector<int> nfe_grid{2, 3, 4, 6, 8, 10, 15, 400};
  std::vector<Coupling> strategies{Coupling::Independent, Coupling::MinibatchOT, Coupling::ConditionalPrior};
  int transport_batches = 20;
  int epoch_stride = 1;
};

struct ExperimentConfig {
  DatasetSection dataset;
  PriorSection prior;
  TrainConfig training;
  SolverSpec solver = EulerSpec{8};
  EvalSection eval;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;
  std::filesystem::path base_dir;  // directory of the config file; relative paths resolve against it
};

/// Parses the JSON config text. Unknown keys, wrong types and unresolvable
/// dataset paths raise ConfigError / IoError.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of every resolved field (defaults included).
std::string canonical_json(const ExperimentConfig& cfg);
/// FNV-1a 64 of canonical_json.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Builds the dataset described by the config (train and test splits).
Dataset build_dataset(const ExperimentConfig& cfg);

/// Full command-line entry point. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cpdflow::app
