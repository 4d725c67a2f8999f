#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctxrisk/data.hpp"
#include "ctxrisk/params.hpp"

namespace ctxrisk::io {

constexpr int kModelFormatVersion = 1;

/// Everything needed to score new data: the parameters plus the feature
/// layout and normalization they were trained with.
struct SavedModel {
  ModelParams params;
  std::vector<std::string> feature_names;
  std::vector<std::string> baseline_names;
  std::vector<bool> baseline_binary;
  data::Normalization normalization;
};

void save_model(const SavedModel& model, const std::filesystem::path& path);

/// Throws on an unknown version, a missing tensor or a shape mismatch.
SavedModel load_model(const std::filesystem::path& path);

/// Throws std::invalid_argument when the dataset's feature or baseline names
/// differ from the model's.
void check_compatible(const SavedModel& model, const data::Dataset& dataset);

}  // namespace ctxrisk::io
