#pragma once

#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace ssat {

using json = nlohmann::json;

// Bad configuration or usage (CLI exit code 2), as opposed to runtime
// failures (exit code 1).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Strict-parsing helper: configs reject unknown fields so typos fail loudly
// instead of silently falling back to defaults.
inline void check_known_keys(const json& j, std::initializer_list<const char*> keys,
                             const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError(where + ": expected a JSON object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(where + ": unknown field '" + it.key() + "'");
    }
  }
}

inline json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    // e.what() carries the byte offset of the failure
    throw ConfigError("'" + path + "': " + e.what());
  }
}

inline void save_json_file(const std::string& path, const json& j) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    f << j.dump(2) << "\n";
    if (!f) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed for '" + path + "'");
  }
}

}  // namespace ssat
