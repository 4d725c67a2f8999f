#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ctxrisk/data.hpp"
#include "ctxrisk/metrics.hpp"
#include "ctxrisk/model.hpp"
#include "ctxrisk/params.hpp"

namespace ctxrisk::train {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  int max_epochs = 100;
  int patience = 10;
  double lambda_decorr = 1.0;
  std::uint64_t seed = 0;

  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn = 0;  // 0 means 2 * hidden
  bool time_aware = true;
  bool per_position_keys = false;

  double test_fraction = 0.15;
  double val_fraction = 0.15;

  model::Exec exec = model::Exec::kParallel;
  bool parallel_folds = false;
};

void validate(const TrainConfig& config);

ModelConfig model_config(const TrainConfig& config, const data::Dataset& dataset);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean total loss over the epoch's batches
  double val_auprc = 0.0;   // NaN when the validation set cannot be scored
  double val_auroc = 0.0;
  double lambda_decorr = 0.0;
  bool improved = false;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_val_auprc = 0.0;
};

/// Called after every epoch with the current parameters; return true to stop.
using EpochCallback = std::function<bool(const EpochRecord&, const ModelParams&)>;

/// Trains on an already-normalized dataset. With an empty (or single-class)
/// validation set there is no early stopping and the final parameters are
/// returned.
TrainResult train(const data::Dataset& dataset, const data::IdSet& train_ids,
                  const data::IdSet& val_ids, const TrainConfig& config,
                  const EpochCallback& callback = {});

struct Split {
  data::IdSet train;
  data::IdSet val;
  data::IdSet test;
};

/// Holds out test_fraction of all cases, then val_fraction of the rest.
Split standard_split(std::size_t n_cases, double test_fraction, double val_fraction,
                     std::uint64_t seed);

/// Mean cross-entropy of the model over ids (no decorrelation term).
double mean_cross_entropy(const ModelParams& params, const data::Dataset& dataset,
                          const data::IdSet& ids);

struct CrossValidationResult {
  metrics::EvalReport folds;         // one replicate per fold; point = pooled
  metrics::EvalReport bootstrap;     // over pooled out-of-fold scores (if requested)
  std::vector<double> oof_scores;    // indexed like dataset.cases
  std::vector<std::vector<EpochRecord>> logs;
};

/// k-fold cross-validation; each fold normalizes with its own training
/// statistics and early-stops on an internal validation slice.
CrossValidationResult cross_validate(const data::Dataset& raw, std::size_t k,
                                     const TrainConfig& config, int bootstrap_reps = 0);

void write_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path);
std::vector<EpochRecord> read_log(const std::filesystem::path& path);

}  // namespace ctxrisk::train
