#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

namespace newscap::testing {

/// Every field of `expected` must be present in `actual` with the same value;
/// numbers compare within `tol`. Extra fields in `actual` are ignored.
/// Returns one line per mismatch.
inline std::vector<std::string> json_mismatches(const nlohmann::json& actual, const nlohmann::json& expected,
                                                double tol = 1e-12, const std::string& path = "") {
  std::vector<std::string> out;
  if (expected.is_object()) {
    if (!actual.is_object()) return {path + ": expected an object"};
    for (const auto& [k, v] : expected.items()) {
      if (!actual.contains(k)) {
        out.push_back(path + "/" + k + ": missing");
        continue;
      }
      auto sub = json_mismatches(actual.at(k), v, tol, path + "/" + k);
      out.insert(out.end(), sub.begin(), sub.end());
    }
  } else if (expected.is_array()) {
    if (!actual.is_array() || actual.size() != expected.size()) return {path + ": array size differs"};
    for (std::size_t i = 0; i < expected.size(); ++i) {
      auto sub = json_mismatches(actual[i], expected[i], tol, path + "/" + std::to_string(i));
      out.insert(out.end(), sub.begin(), sub.end());
    }
  } else if (expected.is_number()) {
    if (!actual.is_number() || std::abs(actual.get<double>() - expected.get<double>()) > tol)
      out.push_back(path + ": " + actual.dump() + " != " + expected.dump());
  } else if (actual != expected) {
    out.push_back(path + ": " + actual.dump() + " != " + expected.dump());
  }
  return out;
}

}  // namespace newscap::testing
