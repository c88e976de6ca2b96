#pragma once

#include <charconv>
#include <string>

namespace attndiff {

// Shortest decimal text that round-trips the double.
inline std::string format_double(double value) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

}  // namespace attndiff
