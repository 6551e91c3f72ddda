#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "oodlab/errors.hpp"

namespace oodlab {

using Json = nlohmann::json;

/// Throws ValidationError naming the first key of `obj` not in `allowed`.
void reject_unknown_keys(const Json& obj, std::initializer_list<std::string_view> allowed,
                         std::string_view where);

/// Reads obj[key] as T, or returns `fallback` when absent. Type mismatches
/// become ValidationError.
template <typename T>
T json_get(const Json& obj, const char* key, T fallback, std::string_view where) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(where) + "." + key + ": " + e.what());
  }
}

template <typename T>
T json_require(const Json& obj, const char* key, std::string_view where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(std::string(where) + ": missing key '" + key + "'");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace oodlab
