#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace attr {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Flat `key = value` configuration with a fixed key registry. Unknown keys
// are rejected; every key has a default so a full dump always round-trips.
class Config {
 public:
  Config();

  static const std::map<std::string, std::string>& defaults();

  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  void apply_override(const std::string& key_eq_value);  // "key=value"
  void dump_file(const std::string& path) const;
  std::string dump() const;

  const std::string& str(const std::string& key) const;
  int geti(const std::string& key) const;
  double getf(const std::string& key) const;
  bool getb(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace attr
