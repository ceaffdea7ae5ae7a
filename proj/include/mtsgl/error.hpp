#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtsgl {

/// Raised for every contract violation in the library (bad shapes, singular
/// transforms, malformed files). Messages name the operation that failed.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
[[noreturn]] inline void fail(std::string_view where, const Args&... args) {
  std::ostringstream os;
  os << where << ": ";
  (os << ... << args);
  throw Error(os.str());
}

template <typename... Args>
inline void require(bool cond, std::string_view where, const Args&... args) {
  if (!cond) fail(where, args...);
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace detail
}  // namespace mtsgl
