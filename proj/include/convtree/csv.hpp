#pragma once

#include <charconv>
#include <optional>
#include <string>

namespace convtree {

/// Shortest round-trip decimal form.
inline std::string fmt(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string fmt(std::optional<double> x) { return x ? fmt(*x) : std::string(); }

}  // namespace convtree
