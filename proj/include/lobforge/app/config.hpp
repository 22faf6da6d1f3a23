#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "lobforge/core/error.hpp"
#include "lobforge/market/io.hpp"

namespace lobforge::app {

// Flat `key = value` text config. Blank lines and `#` comments are ignored;
// later assignments override earlier ones.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "config") {
    Config c;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto body = market::detail::trim(line);
      if (body.empty()) continue;
      auto eq = body.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value");
      }
      auto key = market::detail::trim(body.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(no) + ": empty key");
      c.set(std::string(key), std::string(market::detail::trim(body.substr(eq + 1))));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return parse(in, path);
  }

  // "key=value" override as given on the command line.
  void apply_override(std::string_view assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw ConfigError("override '" + std::string(assignment) + "' must be key=value");
    }
    set(std::string(market::detail::trim(assignment.substr(0, eq))),
        std::string(market::detail::trim(assignment.substr(eq + 1))));
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_real(key, values_.at(key));
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects true|false, got '" + v + "'");
  }

  // Rejects keys outside `known`.
  void check_keys(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string to_text() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
    return out.str();
  }

  static double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lobforge::app
