#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cpdflow::plot {

enum class Kind { Scatter, Trajectory, Curve };

Kind parse_kind(const std::string& name);

/// A CSV file held as text cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column, or -1.
  int column(const std::string& name) const;
};

Table read_table(std::istream& in);
Table load_table(const std::string& path);

/// Renders a standalone SVG. Expected columns:
///   scatter     condition, x_0, x_1             (one dot per row, colored by condition)
///   trajectory  sample_id, t, x_0, x_1          (one polyline per sample_id)
///   curve       strategy|checkpoint, nfe, mmd2  (one labeled polyline per series)
/// Throws ConfigError listing the expected columns on a schema mismatch.
std::string render(Kind kind, const Table& table, const std::string& title = "");

/// Fixed categorical palette; index wraps.
const std::string& palette(std::size_t i);

}  // namespace cpdflow::plot
