#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctxrisk::data {

/// One patient: static baseline plus an N x T record matrix.
struct PatientCase {
  std::string id;
  std::vector<double> baseline;    // length S
  std::vector<double> timestamps;  // length T, hours from first visit
  std::vector<double> records;     // N x T, row = feature, column = visit
  int label = 0;

  std::size_t visits() const { return timestamps.size(); }
  /// Series of feature n across all visits.
  const double* feature_row(std::size_t n) const { return records.data() + n * visits(); }
};

struct Normalization {
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  std::vector<double> baseline_mean;
  std::vector<double> baseline_std;
  bool empty() const { return feature_mean.empty(); }
};

struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<std::string> baseline_names;
  /// Binary baseline flags are exempt from z-scoring.
  std::vector<bool> baseline_binary;
  std::vector<PatientCase> cases;
  Normalization normalization;

  std::size_t n_features() const { return feature_names.size(); }
  std::size_t n_baseline() const { return baseline_names.size(); }
};

/// Indices into Dataset::cases.
using IdSet = std::vector<std::size_t>;

/// Throws std::invalid_argument naming the case when an invariant is broken.
void validate_case(const PatientCase& c, std::size_t n_features, std::size_t n_baseline);

// Line-delimited JSON: a header object, then one patient object per line.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Z-scores dynamic features and numeric baseline dimensions using statistics
/// from the cases in train_ids. Std is floored at kStdFloor.
Dataset normalize(const Dataset& dataset, const IdSet& train_ids);
Normalization fit_normalization(const Dataset& dataset, const IdSet& train_ids);
Dataset apply_normalization(const Dataset& dataset, const Normalization& stats);

constexpr double kStdFloor = 1e-6;

/// k disjoint folds covering every case; sizes differ by at most one.
std::vector<IdSet> split_folds(std::size_t n_cases, std::size_t k, std::uint64_t seed);
std::vector<IdSet> split_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);

/// Random partition of ids into (kept, held_out) with held_out ~ fraction.
std::pair<IdSet, IdSet> holdout_split(const IdSet& ids, double fraction, std::uint64_t seed);

/// Buckets by exact visit count, chunks each bucket into batch_size groups and
/// shuffles everything deterministically under seed.
std::vector<IdSet> make_batches(const Dataset& dataset, const IdSet& ids,
                                std::size_t batch_size, std::uint64_t seed);

IdSet all_ids(const Dataset& dataset);

}  // namespace ctxrisk::data
