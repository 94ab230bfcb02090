#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ngmm/common.hpp"
#include "ngmm/kernel.hpp"
#include "ngmm/lmm.hpp"
#include "ngmm/trainer.hpp"

namespace ngmm {

/// INI-style config: [section] headers, key = value lines, '#' comments.
/// Keys are stored as "section.key".
class Config {
 public:
  Config() = default;

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    Config c;
    std::string line, section;
    long no = 0;
    while (std::getline(in, line)) {
      ++no;
      auto t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ParseError(path + ":" + std::to_string(no) +
                         ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      std::string val = trim(t.substr(eq + 1));
      c.values_[section.empty() ? key : section + "." + key] = val;
    }
    return c;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  std::string require_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::invalid_argument("config: missing required key '" + key + "'");
    return it->second;
  }

  double get_num(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (...) {
      throw ParseError("config: key '" + key + "' is not a number: " +
                       it->second);
    }
  }

  long get_int(const std::string& key, long dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stol(it->second);
    } catch (...) {
      throw ParseError("config: key '" + key + "' is not an integer: " +
                       it->second);
    }
  }

  /// CLI overrides win over file values.
  void set(const std::string& key, const std::string& val) {
    values_[key] = val;
  }

  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : values_) {
      h = fnv1a(k.data(), k.size(), h);
      h = fnv1a("=", 1, h);
      h = fnv1a(v.data(), v.size(), h);
      h = fnv1a("\n", 1, h);
    }
    return h;
  }

  const std::map<std::string, std::string>& items() const { return values_; }

  /// Hyperparameters from [kernel]/[noise], starting from an optional
  /// preset.
  HyperParams hyper_params() const {
    HyperParams p;
    std::string preset = get("kernel.preset", "ngmm1");
    p = preset_params(preset);
    p.kernel.site_var = get_num("kernel.site_var", p.kernel.site_var);
    p.kernel.site_len = get_num("kernel.site_len", p.kernel.site_len);
    p.kernel.path_var = get_num("kernel.path_var", p.kernel.path_var);
    p.kernel.path_len = get_num("kernel.path_len", p.kernel.path_len);
    if (has("kernel.matern_nu"))
      p.kernel.nu = matern_from_string(require_str("kernel.matern_nu"));
    p.tau_dot2 = get_num("noise.tau_dot2", p.tau_dot2);
    p.phi_dot2 = get_num("noise.phi_dot2", p.phi_dot2);
    return p;
  }

  VarianceComponents variance_components() const {
    std::string preset = get("kernel.preset", "ngmm1");
    VarianceComponents v = preset_components(preset);
    v.tau_dot2 = get_num("noise.tau_dot2", v.tau_dot2);
    v.phi_dot2 = get_num("noise.phi_dot2", v.phi_dot2);
    v.tau_ddot2 = get_num("variance_components.tau_ddot2", v.tau_ddot2);
    v.phi_ddot2 = get_num("variance_components.phi_ddot2", v.phi_ddot2);
    return v;
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace ngmm
