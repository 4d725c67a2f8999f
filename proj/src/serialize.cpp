#include "ctxrisk/serialize.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace ctxrisk::io {

using nlohmann::json;

namespace {

json normalization_json(const data::Normalization& n) {
  return {{"feature_mean", n.feature_mean},
          {"feature_std", n.feature_std},
          {"baseline_mean", n.baseline_mean},
          {"baseline_std", n.baseline_std}};
}

data::Normalization normalization_from(const json& j) {
  data::Normalization n;
  j.at("feature_mean").get_to(n.feature_mean);
  j.at("feature_std").get_to(n.feature_std);
  j.at("baseline_mean").get_to(n.baseline_mean);
  j.at("baseline_std").get_to(n.baseline_std);
  return n;
}

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) out += (i ? "," : "") + names[i];
  return out;
}

}  // namespace

void save_model(const SavedModel& m, const std::filesystem::path& path) {
  const auto& cfg = m.params.config;
  json j;
  j["format_version"] = kModelFormatVersion;
  j["config"] = {{"n_features", cfg.dims.n_features},
                 {"n_baseline", cfg.dims.n_baseline},
                 {"hidden", cfg.dims.hidden},
                 {"heads", cfg.dims.heads},
                 {"ffn", cfg.dims.ffn},
                 {"time_aware", cfg.time_aware},
                 {"per_position_keys", cfg.per_position_keys}};
  j["feature_names"] = m.feature_names;
  j["baseline_names"] = m.baseline_names;
  j["baseline_binary"] = m.baseline_binary;
  j["normalization"] = normalization_json(m.normalization);
  json params = json::array();
  for (const auto& e : m.params.store) {
    std::vector<double> values(e.value.values().begin(), e.value.values().end());
    params.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"values", values}});
  }
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model: " + path.string());
  out << j.dump() << '\n';
}

SavedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed model file " + path.string() + ": " + e.what());
  }
  const int version = j.value("format_version", 0);
  if (version != kModelFormatVersion) {
    throw std::runtime_error("unsupported model format version " + std::to_string(version));
  }
  const auto& c = j.at("config");
  ModelConfig cfg;
  cfg.dims.n_features = c.at("n_features").get<std::size_t>();
  cfg.dims.n_baseline = c.at("n_baseline").get<std::size_t>();
  cfg.dims.hidden = c.at("hidden").get<std::size_t>();
  cfg.dims.heads = c.at("heads").get<std::size_t>();
  cfg.dims.ffn = c.at("ffn").get<std::size_t>();
  cfg.time_aware = c.at("time_aware").get<bool>();
  cfg.per_position_keys = c.at("per_position_keys").get<bool>();

  SavedModel m{allocate_model(cfg), {}, {}, {}, {}};
  j.at("feature_names").get_to(m.feature_names);
  j.at("baseline_names").get_to(m.baseline_names);
  j.at("baseline_binary").get_to(m.baseline_binary);
  m.normalization = normalization_from(j.at("normalization"));
  if (m.feature_names.size() != cfg.dims.n_features ||
      m.baseline_names.size() != cfg.dims.n_baseline) {
    throw std::runtime_error("model feature names disagree with its config");
  }

  std::size_t seen = 0;
  for (const auto& pj : j.at("params")) {
    const auto name = pj.at("name").get<std::string>();
    if (!m.params.store.contains(name)) throw std::runtime_error("unknown tensor in model: " + name);
    auto& e = m.params.store.entry(m.params.store.id(name));
    const auto shape = pj.at("shape").get<std::vector<std::size_t>>();
    const auto values = pj.at("values").get<std::vector<double>>();
    if (shape != e.value.shape() || values.size() != e.value.values().size()) {
      throw std::runtime_error("shape mismatch for tensor " + name);
    }
    std::copy(values.begin(), values.end(), e.value.values().begin());
    ++seen;
  }
  if (seen != m.params.store.size()) throw std::runtime_error("model file is missing tensors");
  return m;
}

void check_compatible(const SavedModel& m, const data::Dataset& ds) {
  if (ds.feature_names != m.feature_names) {
    throw std::invalid_argument("feature mismatch: model expects [" + join(m.feature_names) +
                                "], data has [" + join(ds.feature_names) + "]");
  }
  if (ds.baseline_names != m.baseline_names) {
    throw std::invalid_argument("baseline mismatch: model expects [" + join(m.baseline_names) +
                                "], data has [" + join(ds.baseline_names) + "]");
  }
}

}  // namespace ctxrisk::io
