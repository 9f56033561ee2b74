#pragma once

// Minimal CSV helpers for the fixed-schema files exchanged between commands.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <initializer_list>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "ragc/common.hpp"

namespace ragc::csv {

/// 9 significant digits.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline int to_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("csv: bad integer '" + std::string(s) + "'");
  return v;
}

inline double to_double(std::string_view s) {
  const std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size()) throw DataError("csv: bad number '" + tmp + "'");
  return v;
}

class Reader {
 public:
  Reader(std::istream& in, std::initializer_list<std::string_view> header) : in_(in), width_(header.size()) {
    std::string line;
    if (!std::getline(in_, line)) throw DataError("csv: missing header");
    strip(line);
    std::string expected;
    for (std::string_view h : header) {
      if (!expected.empty()) expected += ',';
      expected += h;
    }
    if (line != expected) throw DataError("csv: unexpected header '" + line + "', expected '" + expected + "'");
  }

  /// Fields stay valid until the next call.
  bool next(std::vector<std::string_view>& fields) {
    while (std::getline(in_, line_)) {
      strip(line_);
      if (line_.empty()) continue;
      fields.clear();
      std::size_t start = 0;
      for (;;) {
        const std::size_t comma = line_.find(',', start);
        fields.emplace_back(std::string_view(line_).substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (fields.size() != width_)
        throw DataError("csv: expected " + std::to_string(width_) + " fields in '" + line_ + "'");
      return true;
    }
    return false;
  }

 private:
  static void strip(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
  }

  std::istream& in_;
  std::size_t width_;
  std::string line_;
};

}  // namespace ragc::csv
