#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace ctxrisk::cli {

/// Flat key/value run configuration. Values start from built-in defaults,
/// are overridden by a JSON config file, then by command-line flags.
class RunConfig {
 public:
  /// keys: the keys this command accepts (must be known keys).
  explicit RunConfig(std::vector<std::string> keys);

  /// Every key any command understands, with its default.
  static const nlohmann::ordered_json& defaults();

  /// Merges a JSON object file. Unknown keys and type mismatches throw.
  void merge_file(const std::filesystem::path& path);
  void merge(const nlohmann::json& object, const std::string& origin);
  /// Parses a flag's text according to the key's type.
  void set_from_text(const std::string& key, const std::string& text);

  const nlohmann::json& at(const std::string& key) const;
  std::string str(const std::string& key) const { return at(key).get<std::string>(); }
  double num(const std::string& key) const { return at(key).get<double>(); }
  long long integer(const std::string& key) const { return at(key).get<long long>(); }
  bool flag(const std::string& key) const { return at(key).get<bool>(); }

  const std::vector<std::string>& keys() const { return keys_; }
  nlohmann::ordered_json resolved() const;
  void write_resolved(const std::filesystem::path& path) const;

 private:
  void set(const std::string& key, nlohmann::json value, const std::string& origin);

  std::vector<std::string> keys_;
  std::map<std::string, nlohmann::json> values_;
};

/// "label_noise" -> "label-noise".
std::string flag_name(const std::string& key);

}  // namespace ctxrisk::cli
