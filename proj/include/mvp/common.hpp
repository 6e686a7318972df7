#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvp {

// Error taxonomy. The CLI maps these onto exit codes:
// config/validation/dimension/parse/schema -> 2, I/O -> 3, numeric -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };   // shape mismatch
struct ConfigError    : Error { using Error::Error; };   // bad configuration value
struct ValidationError: Error { using Error::Error; };   // bad input data
struct ParseError     : Error { using Error::Error; };   // unreadable cell/line
struct SchemaError    : Error { using Error::Error; };   // missing/unknown column or key
struct NumericError   : Error { using Error::Error; };   // NaN/Inf abort
struct IoError        : Error { using Error::Error; };   // filesystem failure
struct ContractError  : Error { using Error::Error; };   // API misuse (e.g. double backward)

template <typename T>
void str_append(std::ostringstream& oss, T&& v) {
  oss << std::forward<T>(v);
}

template <typename T, typename... Rest>
void str_append(std::ostringstream& oss, T&& v, Rest&&... rest) {
  oss << std::forward<T>(v);
  str_append(oss, std::forward<Rest>(rest)...);
}

// Builds a message from arbitrary streamable pieces.
template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream oss;
  str_append(oss, std::forward<Args>(args)...);
  return oss.str();
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

}  // namespace mvp
