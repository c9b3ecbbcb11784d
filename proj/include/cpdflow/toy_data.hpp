#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cpdflow/linalg.hpp"

namespace cpdflow {

/// A generation condition: a discrete class id, or a continuous angle.
struct Condition {
  int id = -1;
  double angle = std::numeric_limits<double>::quiet_NaN();

  static Condition discrete(int id) { return {id, std::numeric_limits<double>::quiet_NaN()}; }
  static Condition continuous(double angle) { return {-1, angle}; }
  bool is_continuous() const { return !std::isnan(angle); }

  friend bool operator==(const Condition& a, const Condition& b) {
    return a.id == b.id && (a.angle == b.angle || (std::isnan(a.angle) && std::isnan(b.angle)));
  }
};

std::string to_string(const Condition& c);
/// Inverse of to_string: "<int>" or "angle:<real>".
Condition parse_condition(const std::string& text);

enum class Split { Train, Test };

struct LabeledSample {
  DVector x1;
  Condition cond;
  Split split = Split::Train;
};

using Dataset = std::vector<LabeledSample>;

std::set<int> class_ids(const Dataset& data);

// ---------------------------------------------------------------------------

struct RingSquaresSpec {
  int k = 8;
  double radius = 5.0;
  double prior_std = 0.2;
  double square_side = 0.2;
  int n_per_class = 1000;
  std::uint64_t seed = 0;
};

/// Center of class i: radius * (cos 2πi/k, sin 2πi/k).
DVector ring_center(const RingSquaresSpec& spec, int cls);

/// Targets uniform on the axis-aligned square of side `square_side` around each center.
Dataset gen_ring_squares(const RingSquaresSpec& spec);

/// Train keeps every class not in `held`; test holds exactly the held classes.
/// Throws EmptyTrain when nothing is left to train on.
std::pair<Dataset, Dataset> holdout_split(const Dataset& data, const std::set<int>& held);

// ---------------------------------------------------------------------------

/// VLines class rule. Sorted x coordinates are cut into vertical lines wherever
/// consecutive values differ by more than `line_gap` (in raw file units, before
/// standardization). Lines are numbered 0, 1, 2, ... from left to right and a
/// point's class is its line number modulo `num_classes`, so with two classes
/// every other line belongs to the same class.
struct VLinesRule {
  double line_gap = 2.0;
  int num_classes = 2;
};

/// Reads a Datasaurus-Dozen style CSV (header with columns dataset, x, y;
/// other columns ignored), keeps rows whose dataset is "v_lines", standardizes
/// each axis to zero mean and unit (sample) std, and labels by `rule`.
Dataset load_vlines_csv(const std::string& path, const VLinesRule& rule = {});
Dataset read_vlines_csv(std::istream& in, const VLinesRule& rule = {});

/// Writes a synthetic stand-in in the same CSV layout (dataset,x,y): `lines`
/// vertical lines 10 units apart starting at x = 30, with N(0, 0.3^2) jitter in
/// x and y uniform over a line-dependent interval.
void write_synthetic_vlines_csv(std::ostream& out, int lines, int points_per_line, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct AngleSpec {
  int k_train = 16;
  double radius = 3.0;
  double noise_std = 0.2;
  int n_per_class = 200;
  std::uint64_t seed = 0;
};

/// Train conditions at angles 2πi/k; test conditions offset by half a spacing.
/// x1 = radius (cos θ, sin θ) + N(0, noise_std² I). Test samples carry Split::Test.
Dataset gen_angle_conditioned(const AngleSpec& spec);

/// Synthetic condition embedding E(θ) = (cos θ, sin θ, cos 2θ, sin 2θ).
DVector angle_embedding(double angle);

// ---------------------------------------------------------------------------

/// Dataset CSV: header "condition,x_0,...,x_{d-1},split", split is train|test.
void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);
void save_dataset_csv(const std::string& path, const Dataset& data);
Dataset load_dataset_csv(const std::string& path);

}  // namespace cpdflow
