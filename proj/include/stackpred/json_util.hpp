#ifndef STACKPRED_JSON_UTIL_HPP
#define STACKPRED_JSON_UTIL_HPP

#include <cmath>
#include <limits>
#include <string>

#include <json.hpp>

#include "stackpred/error.hpp"

namespace stackpred {

// nlohmann/json writes the shortest representation that round-trips every
// finite double; non-finite values are spelled out as strings instead of null.
inline nlohmann::json json_number(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
  return v;
}

inline double read_number(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
  }
  throw Error(ErrorCode::InvalidInput, "expected a number, got " + j.dump());
}

}  // namespace stackpred

#endif  // STACKPRED_JSON_UTIL_HPP
