#pragma once

#include <string>

#include <json.hpp>

#include "fpte/common.hpp"

namespace fpte {

using Json = nlohmann::json;

/// Reads a JSON document from disk. Parse failures become ConfigError with
/// the file name, line and column.
Json read_json_file(const std::string& path);

/// Parses JSON text; `source` names the origin in error messages.
Json parse_json_text(const std::string& text, const std::string& source);

/// Returns j[key], throwing ConfigError("<context>.<key>: missing required key").
const Json& require(const Json& j, const std::string& key, const std::string& context);

template <typename T>
T require_as(const Json& j, const std::string& key, const std::string& context) {
  const Json& v = require(j, key, context);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

template <typename T>
T value_or(const Json& j, const std::string& key, const T& fallback, const std::string& context) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

Vec3 vec3_from_json(const Json& j, const std::string& context);
Json vec3_to_json(const Vec3& v);
VecX vecx_from_json(const Json& j, const std::string& context);
Json vecx_to_json(const VecX& v);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace fpte
