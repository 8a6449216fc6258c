#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "loop/tensor.hpp"

namespace loop::cfg {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Flat key/value run configuration. Keys use dotted sections
// ("model.d_model"); one "key = value" pair per line, '#' starts a comment.
// CLI overrides are applied on top of file values and win.
class Config {
 public:
  static Config from_string(const std::string& text) {
    Config c;
    std::istringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw num::UsageError("config line " + std::to_string(lineno) +
                              ": expected key = value");
      std::string key = detail::trim(line.substr(0, eq));
      std::string val = detail::trim(line.substr(eq + 1));
      if (key.empty())
        throw num::UsageError("config line " + std::to_string(lineno) +
                              ": empty key");
      c.set(key, val);
    }
    return c;
  }

  static Config from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw num::UsageError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_string(ss.str());
  }

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  // "key=value" from a --override flag
  void apply_override(const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw num::UsageError("override must be key=value: " + kv);
    set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw num::UsageError("missing required config key: " + key);
    return it->second;
  }
  std::string get_str(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  int64_t get_int(const std::string& key) const { return parse_int(key, get_str(key)); }
  int64_t get_int(const std::string& key, int64_t dflt) const {
    return has(key) ? get_int(key) : dflt;
  }

  uint64_t get_u64(const std::string& key) const {
    const std::string s = get_str(key);
    try {
      size_t used = 0;
      uint64_t v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw num::UsageError("config key " + key + ": not an unsigned integer: " + s);
    }
  }
  uint64_t get_u64(const std::string& key, uint64_t dflt) const {
    return has(key) ? get_u64(key) : dflt;
  }

  double get_double(const std::string& key) const {
    const std::string s = get_str(key);
    try {
      size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw num::UsageError("config key " + key + ": not a number: " + s);
    }
  }
  double get_double(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
  }

  bool get_bool(const std::string& key) const {
    std::string s = get_str(key);
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw num::UsageError("config key " + key + ": not a boolean: " + s);
  }
  bool get_bool(const std::string& key, bool dflt) const {
    return has(key) ? get_bool(key) : dflt;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

  // Canonical snapshot: sorted keys, one pair per line. Written next to run
  // outputs so identical snapshots imply identical runs.
  std::string resolved() const {
    std::ostringstream ss;
    for (const auto& [k, v] : values_) ss << k << " = " << v << "\n";
    return ss.str();
  }

 private:
  static int64_t parse_int(const std::string& key, const std::string& s) {
    try {
      size_t used = 0;
      int64_t v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw num::UsageError("config key " + key + ": not an integer: " + s);
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace loop::cfg
