#include "run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ctxrisk::cli {

using nlohmann::json;
using nlohmann::ordered_json;

const ordered_json& RunConfig::defaults() {
  static const ordered_json d = {
      {"seed", 0},
      {"out", "."},
      {"data", ""},
      {"model", ""},
      // generate
      {"cases", 1000},
      {"features", 4},
      {"baseline", 3},
      {"fast", -1},
      {"interaction", json::array()},
      {"label_noise", 0.0},
      {"prevalence", 0.3},
      // training
      {"lr", 1e-3},
      {"batch_size", 32},
      {"max_epochs", 100},
      {"patience", 10},
      {"lambda_decorr", 1.0},
      {"hidden", 32},
      {"heads", 4},
      {"ffn", 0},
      {"time_aware", true},
      {"per_position_keys", false},
      {"test_fraction", 0.15},
      {"val_fraction", 0.15},
      // eval / cv
      {"split", ""},
      {"subset", "test"},
      {"bootstrap", 0},
      {"folds", 10},
      {"parallel_folds", false},
      // inspect
      {"filter", ""},
      {"final_attention", false},
  };
  return d;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

RunConfig::RunConfig(std::vector<std::string> keys) : keys_(std::move(keys)) {
  for (const auto& k : keys_) {
    if (!defaults().contains(k)) throw std::logic_error("unknown config key " + k);
    values_[k] = defaults().at(k);
  }
}

namespace {

bool same_kind(const json& expected, const json& got) {
  if (expected.is_boolean()) return got.is_boolean();
  if (expected.is_number_integer()) return got.is_number_integer();
  if (expected.is_number()) return got.is_number();
  if (expected.is_string()) return got.is_string();
  if (expected.is_array()) return got.is_array();
  return false;
}

}  // namespace

void RunConfig::set(const std::string& key, json value, const std::string& origin) {
  if (!defaults().contains(key)) throw std::invalid_argument("unknown config key '" + key + "' in " + origin);
  if (!same_kind(defaults().at(key), value)) {
    throw std::invalid_argument("config key '" + key + "' in " + origin + " has the wrong type");
  }
  // Keys for other commands are accepted (a shared file may hold them) but ignored.
  if (std::find(keys_.begin(), keys_.end(), key) != keys_.end()) values_[key] = std::move(value);
}

void RunConfig::merge(const json& object, const std::string& origin) {
  if (!object.is_object()) throw std::invalid_argument(origin + " must hold a JSON object");
  for (const auto& [k, v] : object.items()) set(k, v, origin);
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed config file " + path.string() + ": " + e.what());
  }
  merge(j, path.string());
}

void RunConfig::set_from_text(const std::string& key, const std::string& text) {
  const json& kind = defaults().at(key);
  const std::string origin = "--" + flag_name(key);
  if (kind.is_string()) {
    set(key, text, origin);
    return;
  }
  if (kind.is_array()) {
    json arr = json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) arr.push_back(item);
    }
    set(key, arr, origin);
    return;
  }
  json parsed;
  try {
    parsed = json::parse(text);
  } catch (const json::exception&) {
    throw std::invalid_argument("cannot parse value '" + text + "' for " + origin);
  }
  set(key, parsed, origin);
}

const json& RunConfig::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::logic_error("config key not available: " + key);
  return it->second;
}

ordered_json RunConfig::resolved() const {
  ordered_json out = ordered_json::object();
  for (const auto& k : keys_) out[k] = values_.at(k);
  return out;
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << resolved().dump(2) << '\n';
}

}  // namespace ctxrisk::cli
