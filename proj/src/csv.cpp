#include "cpdflow/csv.hpp"

#include <charconv>
#include <cstdlib>
#include <system_error>

#include "cpdflow/error.hpp"

namespace cpdflow::csv {

std::vector<std::string> split_line(const std::string& raw) {
  std::string line = raw;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& text) {
  std::size_t b = 0, e = text.size();
  while (b < e && (text[b] == ' ' || text[b] == '\t')) ++b;
  while (e > b && (text[e - 1] == ' ' || text[e - 1] == '\t')) --e;
  double v = 0.0;
  const auto res = std::from_chars(text.data() + b, text.data() + e, v);
  if (res.ec != std::errc{} || res.ptr != text.data() + e || b == e) {
    throw Error(ErrorCode::IoError, "not a number: '" + text + "'");
  }
  return v;
}

}  // namespace cpdflow::csv
