#include "ctxrisk/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ctxrisk::data {

using nlohmann::json;

void validate_case(const PatientCase& c, std::size_t n_features, std::size_t n_baseline) {
  const std::string who = "case '" + c.id + "': ";
  if (c.timestamps.empty()) throw std::invalid_argument(who + "no visits (T=0)");
  if (c.timestamps.front() != 0.0) {
    throw std::invalid_argument(who + "first timestamp must be 0");
  }
  for (std::size_t t = 1; t < c.timestamps.size(); ++t) {
    if (!(c.timestamps[t] > c.timestamps[t - 1])) {
      std::ostringstream os;
      os << who << "timestamps not strictly increasing at visit " << t << " ("
         << c.timestamps[t - 1] << " -> " << c.timestamps[t] << ")";
      throw std::invalid_argument(os.str());
    }
  }
  if (c.records.size() != n_features * c.timestamps.size()) {
    throw std::invalid_argument(who + "record matrix does not have one row per feature");
  }
  if (c.baseline.size() != n_baseline) {
    throw std::invalid_argument(who + "baseline length mismatch");
  }
  if (c.label != 0 && c.label != 1) throw std::invalid_argument(who + "label must be 0 or 1");
  for (double v : c.records) {
    if (!std::isfinite(v)) throw std::invalid_argument(who + "non-finite record value");
  }
  for (double v : c.baseline) {
    if (!std::isfinite(v)) throw std::invalid_argument(who + "non-finite baseline value");
  }
}

namespace {

PatientCase parse_case(const json& j, const Dataset& ds, std::size_t line_no) {
  const std::size_t n = ds.n_features();
  PatientCase c;
  c.id = j.at("id").get<std::string>();
  c.baseline = j.at("baseline").get<std::vector<double>>();
  c.label = j.at("label").get<int>();

  const auto& visits = j.at("visits");
  const std::size_t t_count = visits.size();
  if (t_count == 0) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": case '" + c.id +
                                "': no visits (T=0)");
  }
  c.timestamps.resize(t_count);
  c.records.assign(n * t_count, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto& v = visits[t];
    c.timestamps[t] = v.at("t").get<double>();
    const auto& values = v.at("values");
    if (values.is_array()) {
      if (values.size() != n) {
        throw std::invalid_argument("case '" + c.id + "': visit " + std::to_string(t) +
                                    " has " + std::to_string(values.size()) +
                                    " values, expected " + std::to_string(n));
      }
      for (std::size_t f = 0; f < n; ++f) c.records[f * t_count + t] = values[f].get<double>();
    } else if (values.is_object()) {
      std::vector<bool> seen(n, false);
      for (const auto& [name, value] : values.items()) {
        auto it = std::find(ds.feature_names.begin(), ds.feature_names.end(), name);
        if (it == ds.feature_names.end()) {
          throw std::invalid_argument("case '" + c.id + "': unknown feature name '" + name + "'");
        }
        const auto f = static_cast<std::size_t>(it - ds.feature_names.begin());
        c.records[f * t_count + t] = value.get<double>();
        seen[f] = true;
      }
      for (std::size_t f = 0; f < n; ++f) {
        if (!seen[f]) {
          throw std::invalid_argument("case '" + c.id + "': visit " + std::to_string(t) +
                                      " missing feature '" + ds.feature_names[f] + "'");
        }
      }
    } else {
      throw std::invalid_argument("case '" + c.id + "': visit values must be array or object");
    }
  }
  validate_case(c, n, ds.n_baseline());
  return c;
}

std::vector<bool> infer_binary(const Dataset& ds) {
  std::vector<bool> binary(ds.n_baseline(), !ds.cases.empty());
  for (const auto& c : ds.cases) {
    for (std::size_t s = 0; s < binary.size(); ++s) {
      if (c.baseline[s] != 0.0 && c.baseline[s] != 1.0) binary[s] = false;
    }
  }
  return binary;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());

  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool header_binary = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      ds.feature_names = j.at("feature_names").get<std::vector<std::string>>();
      ds.baseline_names = j.at("baseline_names").get<std::vector<std::string>>();
      if (j.contains("baseline_binary")) {
        ds.baseline_binary = j.at("baseline_binary").get<std::vector<bool>>();
        if (ds.baseline_binary.size() != ds.n_baseline()) {
          throw std::invalid_argument("header: baseline_binary length mismatch");
        }
        header_binary = true;
      }
      if (ds.feature_names.empty()) throw std::invalid_argument("header: no feature names");
      have_header = true;
      continue;
    }
    try {
      ds.cases.push_back(parse_case(j, ds, line_no));
    } catch (const json::exception& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw std::invalid_argument("dataset file has no header record");
  if (!header_binary) ds.baseline_binary = infer_binary(ds);
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
  json header = {{"feature_names", dataset.feature_names},
                 {"baseline_names", dataset.baseline_names},
                 {"baseline_binary", dataset.baseline_binary}};
  out << header.dump() << '\n';
  const std::size_t n = dataset.n_features();
  for (const auto& c : dataset.cases) {
    json visits = json::array();
    const std::size_t t_count = c.visits();
    for (std::size_t t = 0; t < t_count; ++t) {
      std::vector<double> values(n);
      for (std::size_t f = 0; f < n; ++f) values[f] = c.records[f * t_count + t];
      visits.push_back({{"t", c.timestamps[t]}, {"values", values}});
    }
    json j = {{"id", c.id}, {"baseline", c.baseline}, {"visits", visits}, {"label", c.label}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing dataset file: " + path.string());
}

Normalization fit_normalization(const Dataset& dataset, const IdSet& train_ids) {
  if (train_ids.empty()) throw std::invalid_argument("normalization needs training cases");
  const std::size_t n = dataset.n_features();
  const std::size_t s_dim = dataset.n_baseline();
  Normalization stats;
  stats.feature_mean.assign(n, 0.0);
  stats.feature_std.assign(n, 1.0);
  stats.baseline_mean.assign(s_dim, 0.0);
  stats.baseline_std.assign(s_dim, 1.0);

  for (std::size_t f = 0; f < n; ++f) {
    double sum = 0.0;
    double count = 0.0;
    for (auto id : train_ids) {
      const auto& c = dataset.cases.at(id);
      const double* row = c.feature_row(f);
      for (std::size_t t = 0; t < c.visits(); ++t) sum += row[t];
      count += static_cast<double>(c.visits());
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (auto id : train_ids) {
      const auto& c = dataset.cases[id];
      const double* row = c.feature_row(f);
      for (std::size_t t = 0; t < c.visits(); ++t) ss += (row[t] - mean) * (row[t] - mean);
    }
    stats.feature_mean[f] = mean;
    stats.feature_std[f] = std::max(std::sqrt(ss / count), kStdFloor);
  }

  for (std::size_t s = 0; s < s_dim; ++s) {
    if (!dataset.baseline_binary.empty() && dataset.baseline_binary[s]) continue;
    double sum = 0.0;
    for (auto id : train_ids) sum += dataset.cases[id].baseline[s];
    const double count = static_cast<double>(train_ids.size());
    const double mean = sum / count;
    double ss = 0.0;
    for (auto id : train_ids) {
      const double d = dataset.cases[id].baseline[s] - mean;
      ss += d * d;
    }
    stats.baseline_mean[s] = mean;
    stats.baseline_std[s] = std::max(std::sqrt(ss / count), kStdFloor);
  }
  return stats;
}

Dataset apply_normalization(const Dataset& dataset, const Normalization& stats) {
  Dataset out = dataset;
  const std::size_t n = dataset.n_features();
  if (stats.feature_mean.size() != n || stats.baseline_mean.size() != dataset.n_baseline()) {
    throw std::invalid_argument("normalization statistics do not match dataset schema");
  }
  for (auto& c : out.cases) {
    for (std::size_t f = 0; f < n; ++f) {
      double* row = c.records.data() + f * c.visits();
      for (std::size_t t = 0; t < c.visits(); ++t) {
        row[t] = (row[t] - stats.feature_mean[f]) / stats.feature_std[f];
      }
    }
    for (std::size_t s = 0; s < c.baseline.size(); ++s) {
      c.baseline[s] = (c.baseline[s] - stats.baseline_mean[s]) / stats.baseline_std[s];
    }
  }
  out.normalization = stats;
  return out;
}

Dataset normalize(const Dataset& dataset, const IdSet& train_ids) {
  return apply_normalization(dataset, fit_normalization(dataset, train_ids));
}

IdSet all_ids(const Dataset& dataset) {
  IdSet ids(dataset.cases.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

std::vector<IdSet> split_folds(std::size_t n_cases, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("split_folds: k must be at least 2");
  if (k > n_cases) throw std::invalid_argument("split_folds: k exceeds case count");
  IdSet perm(n_cases);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<IdSet> folds(k);
  for (std::size_t i = 0; i < n_cases; ++i) folds[i % k].push_back(perm[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::vector<IdSet> split_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  return split_folds(dataset.cases.size(), k, seed);
}

std::pair<IdSet, IdSet> holdout_split(const IdSet& ids, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw std::invalid_argument("holdout fraction must be in [0, 1)");
  }
  IdSet perm = ids;
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  if (fraction > 0.0 && held == 0 && ids.size() >= 2) held = 1;
  if (held >= ids.size() && !ids.empty()) held = ids.size() - 1;
  IdSet out(perm.begin() + static_cast<std::ptrdiff_t>(held), perm.end());
  IdSet in(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(held));
  std::sort(out.begin(), out.end());
  std::sort(in.begin(), in.end());
  return {out, in};
}

std::vector<IdSet> make_batches(const Dataset& dataset, const IdSet& ids,
                                std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  std::map<std::size_t, IdSet> buckets;
  for (auto id : ids) buckets[dataset.cases.at(id).visits()].push_back(id);

  std::mt19937_64 rng(seed);
  std::vector<IdSet> batches;
  for (auto& [len, bucket] : buckets) {
    std::shuffle(bucket.begin(), bucket.end(), rng);
    for (std::size_t i = 0; i < bucket.size(); i += batch_size) {
      const std::size_t end = std::min(bucket.size(), i + batch_size);
      batches.emplace_back(bucket.begin() + static_cast<std::ptrdiff_t>(i),
                           bucket.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace ctxrisk::data
