#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace linv::config {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Flat typed key=value file with [section] headers. Keys are stored as
// "section.key". '#' starts a comment. Values keep internal spaces.
class Config {
 public:
  Config() = default;

  static Config parse_text(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          throw ParseError("line " + std::to_string(lineno) +
                           ": unterminated section header");
        }
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) {
          throw ParseError("line " + std::to_string(lineno) +
                           ": empty section name");
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParseError("line " + std::to_string(lineno) +
                         ": expected key=value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ParseError("line " + std::to_string(lineno) + ": empty key");
      }
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.kv_.count(full)) {
        throw ParseError("line " + std::to_string(lineno) +
                         ": duplicate key " + full);
      }
      c.kv_[full] = value;
    }
    return c;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
  }

  // Environment overrides: key "section.key" <- LINV_SECTION_KEY.
  void apply_env_overrides() {
    for (auto& [key, value] : kv_) {
      std::string env = "LINV_";
      for (char ch : key) {
        env += (ch == '.' || ch == '-')
                   ? '_'
                   : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      }
      if (const char* v = std::getenv(env.c_str())) value = v;
    }
  }

  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ParseError("missing required key " + key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key) const {
    return to_double(key, get_string(key));
  }
  double get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : to_double(key, it->second);
  }

  long get_int(const std::string& key) const {
    return to_int(key, get_string(key));
  }
  long get_int(const std::string& key, long dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : to_int(key, it->second);
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParseError("key " + key + ": expected boolean, got '" + v + "'");
  }

  // Comma-separated doubles.
  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(get_string(key));
    std::string tok;
    while (std::getline(in, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(to_double(key, tok));
    }
    return out;
  }

  // Validation: reject keys outside the subcommand's schema.
  void require_known_keys(const std::set<std::string>& allowed) const {
    std::vector<std::string> unknown;
    for (const auto& [key, _] : kv_) {
      if (!allowed.count(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) {
      std::string msg = "unknown config keys:";
      for (const auto& k : unknown) msg += " " + k;
      throw ParseError(msg);
    }
  }

  const std::map<std::string, std::string>& items() const { return kv_; }

  // Canonical one-line-per-key dump embedded in run records.
  std::vector<std::string> resolved_lines() const {
    std::vector<std::string> out;
    out.reserve(kv_.size());
    for (const auto& [key, value] : kv_) out.push_back(key + "=" + value);
    return out;
  }

 private:
  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ParseError("key " + key + ": expected number, got '" + v + "'");
    }
  }
  static long to_int(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long x = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ParseError("key " + key + ": expected integer, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace linv::config
