#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mmg {

// Flat key/value run configuration. Accepts a small TOML-style format
// ([section] headers, key = value, # comments) or an equivalent JSON object;
// keys flatten to "section.key". Values are stored as strings and parsed by
// the typed getters.
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key, const std::string& def) const;
  std::string require_str(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t def) const;
  int64_t require_int(const std::string& key) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  // Comma-separated list value.
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& def) const;

  // FNV over canonical sorted "key=value" lines.
  std::string config_hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace mmg
