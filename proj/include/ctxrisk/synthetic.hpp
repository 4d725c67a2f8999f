#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctxrisk/data.hpp"

namespace ctxrisk::data {

enum class DecayProfile { kFast, kSlow };

std::string to_string(DecayProfile p);
DecayProfile decay_profile_from_string(const std::string& s);

/// Planted-structure generator settings.
///
/// Fast features are mean-reverting around zero with a short half-life and
/// enter the label through their latest value. Slow features revert quickly
/// around a persistent per-patient level and enter the label through their
/// time-weighted average over the stay. Each interaction contributes
/// latest(feature) * baseline flag.
struct SyntheticSpec {
  int n_features = 4;
  int n_baseline = 3;
  int n_cases = 1000;
  std::vector<DecayProfile> decay_profile;  // empty: first half fast, rest slow
  std::vector<std::pair<int, int>> interaction;  // (feature, baseline flag index)
  double label_noise = 0.0;
  double prevalence = 0.3;
  std::uint64_t seed = 0;

  // Planted weights; a weight of zero removes the term.
  std::vector<double> feature_weight;  // empty: 1.0 for every feature
  double interaction_weight = 1.5;

  double fast_half_life = 8.0;    // hours
  double slow_half_life = 4.0;    // hours, noise around the patient level
  double mean_gap = 12.0;         // hours
  int min_visits = 6;
  int max_visits = 24;
};

struct SyntheticManifest {
  SyntheticSpec spec;
  std::vector<std::string> feature_names;
  std::vector<std::string> baseline_names;
  double threshold = 0.0;  // label = planted score > threshold (before noise)
  double realized_prevalence = 0.0;
};

struct SyntheticResult {
  Dataset dataset;
  SyntheticManifest manifest;
  /// Planted score per case, before thresholding and noise.
  std::vector<double> scores;
};

SyntheticResult generate_synthetic(const SyntheticSpec& spec);

void save_manifest(const SyntheticManifest& manifest, const std::filesystem::path& path);
SyntheticManifest load_manifest(const std::filesystem::path& path);

/// The planted-score terms of one case (exposed for oracle tests).
double latest_value(const PatientCase& c, std::size_t feature);
double time_weighted_mean(const PatientCase& c, std::size_t feature);

}  // namespace ctxrisk::data
