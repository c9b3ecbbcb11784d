#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cpdflow::csv {

/// Splits one CSV line on commas. Double-quoted fields may contain commas;
/// doubled quotes inside them are unescaped. Trailing '\r' is dropped.
std::vector<std::string> split_line(const std::string& line);

/// Shortest decimal text that round-trips the double.
std::string format_real(double v);

double parse_real(const std::string& text);

}  // namespace cpdflow::csv
