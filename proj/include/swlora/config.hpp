#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace swlora {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat `section.key = value` settings. Only keys declared in the schema are
/// accepted; every key always has a value (its default until overridden).
class Config {
 public:
  Config();

  static Config from_file(const std::filesystem::path& path);
  static Config from_string(const std::string& text);

  /// Applies one `key=value` override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has_key(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Every key with its current value, one `key = value` per line, sorted.
  std::string dump() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  struct KeyInfo {
    std::string default_value;
    std::string help;
  };
  static const std::map<std::string, KeyInfo>& schema();

 private:
  void parse(std::istream& is, const std::string& origin);
  std::map<std::string, std::string> values_;
};

/// Splits "a,b,c" into trimmed fields.
std::vector<std::string> split_list(const std::string& s);

}  // namespace swlora
