#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace cdnn {

/// Bad configuration: unknown keys, out-of-range values, inconsistent options.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad input data: unreadable files, mismatched datasets, malformed weight files.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure: shape mismatches, non-finite values, invalid tensor ops.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename Head, typename... Tail>
void format_into(std::ostringstream& os, const Head& head, const Tail&... tail) {
  os << head;
  format_into(os, tail...);
}
}  // namespace detail

/// Builds an error message by streaming all arguments together.
template <typename... Args>
std::string msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

}  // namespace cdnn
