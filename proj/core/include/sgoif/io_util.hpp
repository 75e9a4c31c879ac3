#ifndef SGOIF_IO_UTIL_HPP
#define SGOIF_IO_UTIL_HPP

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sgoif/errors.hpp"

namespace sgoif {

/// Shortest round-trip decimal form of a double. Deterministic, so CSV
/// and JSON outputs are byte-stable across runs and thread counts.
inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double out = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc()) throw IoError("bad number: " + std::string(s));
  return out;
}

inline long parse_long(std::string_view s) {
  long out = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc()) throw IoError("bad integer: " + std::string(s));
  return out;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

}  // namespace sgoif

#endif
