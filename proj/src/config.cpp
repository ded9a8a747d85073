#include "mmg/config.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "mmg/errors.hpp"
#include "mmg/rng.hpp"

namespace mmg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string strip_quotes(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    std::string joined;
    for (const auto& v : j) {
      if (!joined.empty()) joined += ",";
      joined += v.is_string() ? v.get<std::string>() : v.dump();
    }
    out[prefix] = joined;
  } else if (j.is_string()) {
    out[prefix] = j.get<std::string>();
  } else {
    out[prefix] = j.dump();
  }
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return from_string(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  // JSON object or TOML-style lines, decided by the first non-space char.
  size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      flatten_json(nlohmann::json::parse(text), "", cfg.kv_);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return cfg;
  }
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = strip_quotes(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    cfg.kv_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

std::string RunConfig::get_str(const std::string& key, const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

std::string RunConfig::require_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key, int64_t def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    return std::stoll(it->second);
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
  }
}

int64_t RunConfig::require_int(const std::string& key) const {
  if (!has(key)) throw ConfigError("missing required config key '" + key + "'");
  return get_int(key, 0);
}

double RunConfig::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not a number: " + it->second);
  }
}

bool RunConfig::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " + v);
}

std::vector<std::string> RunConfig::get_list(const std::string& key,
                                             const std::vector<std::string>& def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::vector<std::string> out;
  std::istringstream is(it->second);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::config_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [k, v] : kv_) {  // std::map iterates sorted
    h = fnv1a64(k.data(), k.size(), h);
    h = fnv1a64("=", 1, h);
    h = fnv1a64(v.data(), v.size(), h);
    h = fnv1a64("\n", 1, h);
  }
  return hash_hex(h);
}

}  // namespace mmg
