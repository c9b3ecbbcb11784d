#include "cpdflow/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "cpdflow/csv.hpp"
#include "cpdflow/error.hpp"

namespace cpdflow::plot {

namespace {

constexpr double kWidth = 480, kHeight = 480, kMargin = 48;

const std::array<std::string, 10> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

struct Frame {
  Range x, y;
  bool log_x = false;

  double px(double v) const {
    const double a = log_x ? std::log10(v) : v;
    return kMargin + (a - x.lo) / (x.hi - x.lo) * (kWidth - 2 * kMargin);
  }
  double py(double v) const { return kHeight - kMargin - (v - y.lo) / (y.hi - y.lo) * (kHeight - 2 * kMargin); }
};

void open_svg(std::ostream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty())
    o << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostream& o, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  const double x0 = kMargin, x1 = kWidth - kMargin, y0 = kHeight - kMargin, y1 = kMargin;
  o << "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\"/>\n";
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\"/>\n";
  o << "</g>\n";
  auto tick_x = [&](double a) { return f.log_x ? std::pow(10.0, a) : a; };
  o << "<g font-size=\"10\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double ax = f.x.lo + (f.x.hi - f.x.lo) * k / 4.0;
    const double ay = f.y.lo + (f.y.hi - f.y.lo) * k / 4.0;
    const double xv = tick_x(ax);
    o << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(y0 + 14) << "\" text-anchor=\"middle\">"
      << num(xv) << "</text>\n";
    o << "<text x=\"" << num(x0 - 4) << "\" y=\"" << num(f.py(ay) + 3) << "\" text-anchor=\"end\">" << num(ay)
      << "</text>\n";
  }
  o << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 8 << "\" text-anchor=\"middle\">" << escape(xlabel)
    << "</text>\n";
  o << "<text x=\"12\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 12 " << kHeight / 2
    << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
  o << "</g>\n";
}

std::vector<int> require(const Table& t, std::initializer_list<std::vector<std::string>> columns,
                         const std::string& kind) {
  std::vector<int> idx;
  std::string expected;
  for (const auto& alts : columns) {
    if (!expected.empty()) expected += ", ";
    for (std::size_t a = 0; a < alts.size(); ++a) expected += (a ? "|" : "") + alts[a];
  }
  for (const auto& alts : columns) {
    int found = -1;
    for (const auto& name : alts)
      if ((found = t.column(name)) >= 0) break;
    if (found < 0)
      throw Error(ErrorCode::ConfigError, kind + " plot: CSV schema mismatch, expected columns: " + expected);
    idx.push_back(found);
  }
  return idx;
}

double cell(const Table& t, std::size_t row, int col) {
  const auto& r = t.rows[row];
  if (col >= static_cast<int>(r.size()))
    throw Error(ErrorCode::IoError, "short row " + std::to_string(row + 2) + " in plot input");
  return csv::parse_real(r[col]);
}

/// Series keys in first-appearance order.
std::vector<std::string> series_order(const Table& t, int col) {
  std::vector<std::string> keys;
  for (const auto& r : t.rows)
    if (std::find(keys.begin(), keys.end(), r.at(col)) == keys.end()) keys.push_back(r.at(col));
  return keys;
}

std::string scatter(const Table& t, const std::string& title) {
  const auto c = require(t, {{"condition"}, {"x_0"}, {"x_1"}}, "scatter");
  Frame f;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    pts.emplace_back(cell(t, i, c[1]), cell(t, i, c[2]));
    f.x.add(pts.back().first);
    f.y.add(pts.back().second);
  }
  f.x.finish();
  f.y.finish();
  auto conds = series_order(t, c[0]);
  std::sort(conds.begin(), conds.end());
  std::map<std::string, std::size_t> color;
  for (std::size_t k = 0; k < conds.size(); ++k) color[conds[k]] = k;

  std::ostringstream o;
  open_svg(o, title);
  axes(o, f, "x_0", "x_1");
  o << "<g class=\"points\">\n";
  for (std::size_t i = 0; i < pts.size(); ++i)
    o << "<circle cx=\"" << num(f.px(pts[i].first)) << "\" cy=\"" << num(f.py(pts[i].second))
      << "\" r=\"1.5\" fill=\"" << palette(color[t.rows[i][c[0]]]) << "\"/>\n";
  o << "</g>\n</svg>\n";
  return o.str();
}

std::string trajectory(const Table& t, const std::string& title) {
  const auto c = require(t, {{"sample_id"}, {"t"}, {"x_0"}, {"x_1"}}, "trajectory");
  Frame f;
  std::map<std::string, std::vector<std::pair<double, std::pair<double, double>>>> paths;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double x = cell(t, i, c[2]), y = cell(t, i, c[3]);
    paths[t.rows[i][c[0]]].push_back({cell(t, i, c[1]), {x, y}});
    f.x.add(x);
    f.y.add(y);
  }
  f.x.finish();
  f.y.finish();
  std::ostringstream o;
  open_svg(o, title);
  axes(o, f, "x_0", "x_1");
  o << "<g class=\"paths\" fill=\"none\" stroke-width=\"0.8\">\n";
  std::size_t k = 0;
  for (auto& [id, pts] : paths) {
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    o << "<polyline stroke=\"" << palette(k++) << "\" points=\"";
    for (std::size_t j = 0; j < pts.size(); ++j)
      o << (j ? " " : "") << num(f.px(pts[j].second.first)) << ',' << num(f.py(pts[j].second.second));
    o << "\"/>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

std::string curve(const Table& t, const std::string& title) {
  const auto c = require(t, {{"strategy", "checkpoint"}, {"nfe"}, {"mmd2"}}, "curve");
  Frame f;
  f.log_x = true;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double n = cell(t, i, c[1]);
    if (!(n > 0)) throw Error(ErrorCode::ConfigError, "curve plot: nfe must be positive");
    f.x.add(std::log10(n));
    f.y.add(cell(t, i, c[2]));
  }
  f.x.finish();
  f.y.finish();
  const auto keys = series_order(t, c[0]);
  std::ostringstream o;
  open_svg(o, title);
  axes(o, f, "NFE", "MMD^2");
  for (std::size_t k = 0; k < keys.size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
      if (t.rows[i][c[0]] == keys[k]) pts.emplace_back(cell(t, i, c[1]), cell(t, i, c[2]));
    std::stable_sort(pts.begin(), pts.end());
    o << "<g class=\"series\" data-label=\"" << escape(keys[k]) << "\">\n";
    o << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << palette(k) << "\" points=\"";
    for (std::size_t j = 0; j < pts.size(); ++j)
      o << (j ? " " : "") << num(f.px(pts[j].first)) << ',' << num(f.py(pts[j].second));
    o << "\"/>\n";
    o << "<text x=\"" << num(kWidth - kMargin - 4) << "\" y=\"" << num(kMargin + 14 * (k + 1))
      << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << palette(k) << "\">" << escape(keys[k]) << "</text>\n";
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace

Kind parse_kind(const std::string& name) {
  if (name == "scatter") return Kind::Scatter;
  if (name == "trajectory") return Kind::Trajectory;
  if (name == "curve") return Kind::Curve;
  throw Error(ErrorCode::ConfigError, "unknown plot kind '" + name + "' (expected scatter|trajectory|curve)");
}

int Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

Table read_table(std::istream& in) {
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "plot input CSV is empty");
  t.header = csv::split_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    t.rows.push_back(csv::split_line(line));
  }
  return t;
}

Table load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_table(in);
}

std::string render(Kind kind, const Table& table, const std::string& title) {
  switch (kind) {
    case Kind::Scatter: return scatter(table, title);
    case Kind::Trajectory: return trajectory(table, title);
    case Kind::Curve: return curve(table, title);
  }
  return {};
}

const std::string& palette(std::size_t i) { return kPalette[i % kPalette.size()]; }

}  // namespace cpdflow::plot
