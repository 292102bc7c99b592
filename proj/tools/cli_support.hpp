// Pure parsing helpers for the command-line tool, split out so the unit suite
// can exercise them without driving the binary.
#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fcmstab/core.hpp"

namespace fcmstab::cli {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// One `key=value` per line; `#` starts a comment; blank lines are skipped.
// Later assignments win. A line without `=` or with an empty key rejects the
// whole file: silently dropping a typo would mask a misconfiguration.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string_view line(text.data() + pos, (nl == std::string::npos ? text.size() : nl) - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string_view::npos, Errc::bad_input,
            "config line " + std::to_string(lineno) + ": expected key=value");
    const std::string_view key = trim(line.substr(0, eq));
    require(!key.empty(), Errc::bad_input,
            "config line " + std::to_string(lineno) + ": empty key");
    out[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

namespace detail {

template <class T>
T from_chars_all(std::string_view s, const char* what) {
  s = trim(s);
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::bad_input,
          std::string(what) + ": not a valid number '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline int to_int(std::string_view s, const char* what) {
  return detail::from_chars_all<int>(s, what);
}
inline std::uint64_t to_u64(std::string_view s, const char* what) {
  return detail::from_chars_all<std::uint64_t>(s, what);
}
inline double to_double(std::string_view s, const char* what) {
  return detail::from_chars_all<double>(s, what);
}

// Hidden-layer spec: "WIDTHxLAYERS" (e.g. 1024x6), or a bare width for a
// single hidden layer. Width and layer count must be positive.
inline std::vector<int> parse_hidden_spec(const std::string& spec) {
  const size_t x = spec.find('x');
  int width = 0, layers = 1;
  if (x == std::string::npos) {
    width = to_int(spec, "hidden width");
  } else {
    width = to_int(std::string_view(spec).substr(0, x), "hidden width");
    layers = to_int(std::string_view(spec).substr(x + 1), "hidden layer count");
  }
  require(width >= 1, Errc::bad_input, "hidden width must be positive");
  require(layers >= 1 && layers <= 64, Errc::bad_input, "hidden layer count must be in [1, 64]");
  return std::vector<int>(static_cast<size_t>(layers), width);
}

}  // namespace fcmstab::cli
