#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ctxrisk::metrics {

/// Mann-Whitney AUROC with half credit for tied scores.
/// Throws "undefined AUROC" when only one class is present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Average precision. Cases are walked in descending score order; a group
/// of tied scores forms a single threshold step, so every positive in the
/// group is credited with the precision at the end of the group.
double auprc(std::span<const double> scores, std::span<const int> labels);

/// max over thresholds (the distinct observed scores) of
/// min(sensitivity, precision), predicting positive when score >= threshold.
double min_se_pplus(std::span<const double> scores, std::span<const int> labels);

struct MetricSummary {
  double point = 0.0;  // on the full input
  double mean = 0.0;
  double std = 0.0;    // population std over replicates
  std::vector<double> replicates;
};

/// Keyed by "auroc", "auprc", "min_se_pplus".
struct EvalReport {
  std::map<std::string, MetricSummary> metrics;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"auroc", "auprc", "min_se_pplus"};
  return names;
}

/// Point estimates only (no replicates).
EvalReport point_report(std::span<const double> scores, std::span<const int> labels);

/// reps resamples with replacement of the (score, label) pairs, each the
/// size of the input. Resamples that lose a class are redrawn from the same
/// replicate stream. Replicate r uses a seed derived from (seed, r).
EvalReport bootstrap_eval(std::span<const double> scores, std::span<const int> labels, int reps,
                          std::uint64_t seed);

/// Fills mean/std from the replicates already in summary.
void summarize(MetricSummary& summary);

/// "AUROC 0.8702(0.0019) AUPRC ..." using mean(std).
std::string format_mean_std(const EvalReport& report, int precision = 4);

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

}  // namespace ctxrisk::metrics
