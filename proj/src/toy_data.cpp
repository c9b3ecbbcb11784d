#include "cpdflow/toy_data.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cpdflow/csv.hpp"
#include "cpdflow/error.hpp"

namespace cpdflow {

std::string to_string(const Condition& c) {
  if (c.is_continuous()) return "angle:" + csv::format_real(c.angle);
  return std::to_string(c.id);
}

Condition parse_condition(const std::string& text) {
  if (text.rfind("angle:", 0) == 0) return Condition::continuous(csv::parse_real(text.substr(6)));
  int id = 0;
  std::size_t used = 0;
  try {
    id = std::stoi(text, &used);
  } catch (const std::exception&) {
    throw Error(ErrorCode::IoError, "bad condition '" + text + "'");
  }
  if (used != text.size()) throw Error(ErrorCode::IoError, "bad condition '" + text + "'");
  return Condition::discrete(id);
}

std::set<int> class_ids(const Dataset& data) {
  std::set<int> ids;
  for (const auto& s : data)
    if (!s.cond.is_continuous()) ids.insert(s.cond.id);
  return ids;
}

// ---------------------------------------------------------------------------

DVector ring_center(const RingSquaresSpec& spec, int cls) {
  const double a = 2.0 * std::numbers::pi * cls / spec.k;
  return {spec.radius * std::cos(a), spec.radius * std::sin(a)};
}

Dataset gen_ring_squares(const RingSquaresSpec& spec) {
  if (spec.k < 2) throw Error(ErrorCode::ConfigError, "ring toy needs k >= 2");
  if (spec.square_side <= 0 || spec.prior_std <= 0) throw Error(ErrorCode::ConfigError, "ring toy widths must be positive");
  Rng rng(spec.seed);
  Dataset out;
  out.reserve(static_cast<std::size_t>(spec.k) * spec.n_per_class);
  const double half = 0.5 * spec.square_side;
  for (int c = 0; c < spec.k; ++c) {
    const DVector center = ring_center(spec, c);
    for (int i = 0; i < spec.n_per_class; ++i) {
      DVector x{center[0] + rng.uniform(-half, half), center[1] + rng.uniform(-half, half)};
      out.push_back({std::move(x), Condition::discrete(c), Split::Train});
    }
  }
  return out;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, const std::set<int>& held) {
  Dataset train, test;
  for (const auto& s : data) {
    if (!s.cond.is_continuous() && held.count(s.cond.id)) {
      test.push_back(s);
      test.back().split = Split::Test;
    } else {
      train.push_back(s);
      train.back().split = Split::Train;
    }
  }
  if (train.empty()) throw Error(ErrorCode::EmptyTrain, "every class was held out");
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------

Dataset read_vlines_csv(std::istream& in, const VLinesRule& rule) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "VLines CSV is empty (row 1)");
  const auto header = csv::split_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorCode::IoError, "VLines CSV header lacks column '" + name + "'");
  };
  const std::size_t cd = column("dataset"), cx = column("x"), cy = column("y");
  const std::size_t need = std::max({cd, cx, cy}) + 1;

  std::vector<DVector> pts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split_line(line);
    if (f.size() < need) throw Error(ErrorCode::IoError, "malformed VLines row " + std::to_string(row));
    if (f[cd] != "v_lines") continue;
    try {
      pts.push_back({csv::parse_real(f[cx]), csv::parse_real(f[cy])});
    } catch (const Error&) {
      throw Error(ErrorCode::IoError, "malformed VLines row " + std::to_string(row));
    }
  }
  if (pts.empty()) throw Error(ErrorCode::EmptyDataset, "no v_lines rows in VLines CSV");

  // Line labels from gaps in the sorted raw x coordinates.
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pts[a][0] < pts[b][0]; });
  std::vector<int> line_of(pts.size(), 0);
  int current = 0;
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (pts[order[k]][0] - pts[order[k - 1]][0] > rule.line_gap) ++current;
    line_of[order[k]] = current;
  }

  const std::size_t n = pts.size();
  Dataset out;
  out.reserve(n);
  DVector mean(2, 0.0), sd(2, 0.0);
  for (const auto& p : pts)
    for (int a = 0; a < 2; ++a) mean[a] += p[a];
  for (double& m : mean) m /= static_cast<double>(n);
  for (const auto& p : pts)
    for (int a = 0; a < 2; ++a) sd[a] += (p[a] - mean[a]) * (p[a] - mean[a]);
  for (double& s : sd) s = n > 1 ? std::sqrt(s / static_cast<double>(n - 1)) : 1.0;
  for (double& s : sd)
    if (s == 0.0) s = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    DVector x{(pts[i][0] - mean[0]) / sd[0], (pts[i][1] - mean[1]) / sd[1]};
    out.push_back({std::move(x), Condition::discrete(line_of[i] % rule.num_classes), Split::Train});
  }
  return out;
}

Dataset load_vlines_csv(const std::string& path, const VLinesRule& rule) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open VLines CSV " + path);
  return read_vlines_csv(in, rule);
}

void write_synthetic_vlines_csv(std::ostream& out, int lines, int points_per_line, std::uint64_t seed) {
  Rng rng(seed);
  out << "dataset,x,y\n";
  for (int l = 0; l < lines; ++l) {
    const double x0 = 30.0 + 10.0 * l;
    // Alternate long and short lines so the two classes overlap in y.
    const double lo = (l % 2 == 0) ? 0.0 + 5.0 * (l % 3) : 20.0;
    const double hi = (l % 2 == 0) ? 100.0 - 5.0 * (l % 3) : 90.0 - 5.0 * (l % 3);
    for (int i = 0; i < points_per_line; ++i) {
      const double x = x0 + 0.3 * rng.normal();
      const double y = rng.uniform(lo, hi);
      out << "v_lines," << csv::format_real(x) << ',' << csv::format_real(y) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

DVector angle_embedding(double a) { return {std::cos(a), std::sin(a), std::cos(2 * a), std::sin(2 * a)}; }

Dataset gen_angle_conditioned(const AngleSpec& spec) {
  if (spec.k_train < 2) throw Error(ErrorCode::ConfigError, "angle toy needs k_train >= 2");
  Rng rng(spec.seed);
  Dataset out;
  const double spacing = 2.0 * std::numbers::pi / spec.k_train;
  for (int pass = 0; pass < 2; ++pass) {
    const Split split = pass == 0 ? Split::Train : Split::Test;
    for (int i = 0; i < spec.k_train; ++i) {
      const double theta = spacing * i + (pass == 0 ? 0.0 : 0.5 * spacing);
      for (int j = 0; j < spec.n_per_class; ++j) {
        DVector x{spec.radius * std::cos(theta) + spec.noise_std * rng.normal(),
                  spec.radius * std::sin(theta) + spec.noise_std * rng.normal()};
        out.push_back({std::move(x), Condition::continuous(theta), split});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  const std::size_t d = data.empty() ? 2 : data.front().x1.size();
  out << "condition";
  for (std::size_t i = 0; i < d; ++i) out << ",x_" << i;
  out << ",split\n";
  for (const auto& s : data) {
    out << to_string(s.cond);
    for (double v : s.x1) out << ',' << csv::format_real(v);
    out << ',' << (s.split == Split::Train ? "train" : "test") << '\n';
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "dataset CSV is empty (row 1)");
  const auto header = csv::split_line(line);
  if (header.size() < 3 || header.front() != "condition" || header.back() != "split") {
    throw Error(ErrorCode::IoError, "dataset CSV header must be condition,x_0,...,split");
  }
  const std::size_t d = header.size() - 2;
  Dataset data;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split_line(line);
    if (f.size() != d + 2) throw Error(ErrorCode::IoError, "malformed dataset row " + std::to_string(row));
    LabeledSample s;
    try {
      s.cond = parse_condition(f[0]);
      for (std::size_t i = 0; i < d; ++i) s.x1.push_back(csv::parse_real(f[1 + i]));
    } catch (const Error&) {
      throw Error(ErrorCode::IoError, "malformed dataset row " + std::to_string(row));
    }
    if (f.back() == "train") s.split = Split::Train;
    else if (f.back() == "test") s.split = Split::Test;
    else throw Error(ErrorCode::IoError, "bad split tag at row " + std::to_string(row));
    data.push_back(std::move(s));
  }
  return data;
}

void save_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_dataset_csv(out, data);
}

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open dataset " + path);
  return read_dataset_csv(in);
}

}  // namespace cpdflow
