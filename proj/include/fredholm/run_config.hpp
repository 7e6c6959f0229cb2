#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fredholm {

/// Flat key=value run configuration.  Keys are unique, ordering is never
/// significant, and the canonical text (sorted keys, one `key=value` line
/// each) is the run's identity: two configurations are the same run exactly
/// when their canonical texts match.  Output location and thread count are
/// environment matters and must never be stored here.
class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find('=') != std::string::npos ||
        key.find_first_of(" \t\r\n") != std::string::npos)
      throw std::invalid_argument("RunConfig: invalid key '" + key + "'");
    if (value.find_first_of("\r\n") != std::string::npos)
      throw std::invalid_argument("RunConfig: value for '" + key +
                                  "' must be a single line");
    entries_[key] = value;
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_numeric<double>(key, it->second);
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_numeric<std::size_t>(key, it->second);
  }

  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_numeric<std::uint64_t>(key, it->second);
  }

  /// Lines of `key=value`; blank lines and lines starting with '#' are
  /// skipped, later occurrences of a key win.
  static RunConfig parse(const std::string& text) {
    RunConfig config;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed.front() == '#') continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("RunConfig: line without '=': '" + trimmed + "'");
      config.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
    return config;
  }

  static RunConfig load(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in)
      throw std::runtime_error("cannot open config '" + file.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str());
  }

  std::string canonical_text() const {
    std::string out;
    for (const auto& [key, value] : entries_) {
      out += key;
      out += '=';
      out += value;
      out += '\n';
    }
    return out;
  }

  /// FNV-1a over the canonical text.
  std::uint64_t hash() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (const char c : canonical_text()) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::string hash_hex() const {
    static const char digits[] = "0123456789abcdef";
    std::uint64_t h = hash();
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[std::size_t(i)] = digits[h & 0xf];
    return out;
  }

  bool operator==(const RunConfig& other) const { return entries_ == other.entries_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
    return s.substr(b, e - b);
  }

  template <typename T>
  static T parse_numeric(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out{};
    in >> out;
    if (in.fail() || !in.eof())
      throw std::invalid_argument("RunConfig: value of '" + key +
                                  "' is not numeric: '" + value + "'");
    return out;
  }

  std::map<std::string, std::string> entries_;
};

}  // namespace fredholm
