#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

namespace tabformer {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ConfigError when `j` has a key that `defaults` does not.
inline void check_keys(const nlohmann::json& j, const nlohmann::json& defaults, const std::string& where) {
  if (j.is_null()) return;
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename Value>
void read_key(const nlohmann::json& j, const char* key, Value& out) {
  if (j.is_null() || !j.contains(key)) return;
  try {
    out = j.at(key).get<Value>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace tabformer
