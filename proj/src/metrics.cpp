#include "ctxrisk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ctxrisk::metrics {

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels length mismatch");
  ClassCounts c;
  for (int y : labels) {
    if (y == 1) {
      ++c.pos;
    } else if (y == 0) {
      ++c.neg;
    } else {
      throw std::invalid_argument("labels must be 0 or 1");
    }
  }
  return c;
}

/// Indices ordered by descending score, ties in input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = count_classes(scores, labels);
  if (counts.pos == 0 || counts.neg == 0) throw std::invalid_argument("undefined AUROC");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // 1-based ranks i+1..j share their average.
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) rank_sum += mid_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(counts.pos);
  const double n = static_cast<double>(counts.neg);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * n);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = count_classes(scores, labels);
  if (counts.pos == 0) throw std::invalid_argument("undefined AUPRC: no positive cases");
  const auto idx = descending_order(scores);
  const double total_pos = static_cast<double>(counts.pos);
  double ap = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t group_pos = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      group_pos += static_cast<std::size_t>(labels[idx[j]] == 1);
      ++j;
    }
    tp += group_pos;
    seen += j - i;
    if (group_pos > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += precision * (static_cast<double>(group_pos) / total_pos);
    }
    i = j;
  }
  return ap;
}

double min_se_pplus(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = count_classes(scores, labels);
  if (counts.pos == 0 || counts.neg == 0) {
    throw std::invalid_argument("undefined min(Se,P+): single-class labels");
  }
  const auto idx = descending_order(scores);
  const double total_pos = static_cast<double>(counts.pos);
  double best = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += static_cast<std::size_t>(labels[idx[j]] == 1);
      ++j;
    }
    seen = j;
    const double se = static_cast<double>(tp) / total_pos;
    const double ppv = static_cast<double>(tp) / static_cast<double>(seen);
    best = std::max(best, std::min(se, ppv));
    i = j;
  }
  return best;
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  // splitmix64 of the combined value
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void summarize(MetricSummary& s) {
  if (s.replicates.empty()) {
    s.mean = s.point;
    s.std = 0.0;
    return;
  }
  const double n = static_cast<double>(s.replicates.size());
  double mean = 0.0;
  for (double v : s.replicates) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : s.replicates) ss += (v - mean) * (v - mean);
  s.mean = mean;
  s.std = std::sqrt(ss / n);
}

EvalReport point_report(std::span<const double> scores, std::span<const int> labels) {
  EvalReport r;
  r.metrics["auroc"].point = auroc(scores, labels);
  r.metrics["auprc"].point = auprc(scores, labels);
  r.metrics["min_se_pplus"].point = min_se_pplus(scores, labels);
  for (auto& [name, m] : r.metrics) summarize(m);
  return r;
}

EvalReport bootstrap_eval(std::span<const double> scores, std::span<const int> labels, int reps,
                          std::uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("bootstrap needs at least one replicate");
  EvalReport report = point_report(scores, labels);
  const std::size_t n = scores.size();
  const auto R = static_cast<std::size_t>(reps);
  std::vector<double> roc(R), prc(R), msp(R);

#pragma omp parallel for schedule(dynamic)
  for (int ri = 0; ri < reps; ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    std::mt19937_64 rng(derive_seed(seed, r));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int attempt = 0;; ++attempt) {
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = pick(rng);
        s[i] = scores[k];
        y[i] = labels[k];
        pos += static_cast<std::size_t>(y[i] == 1);
      }
      if (pos > 0 && pos < n) break;
      if (attempt > 10000) break;  // cannot happen when both classes are present
    }
    roc[r] = auroc(s, y);
    prc[r] = auprc(s, y);
    msp[r] = min_se_pplus(s, y);
  }
  report.metrics["auroc"].replicates = std::move(roc);
  report.metrics["auprc"].replicates = std::move(prc);
  report.metrics["min_se_pplus"].replicates = std::move(msp);
  for (auto& [name, m] : report.metrics) summarize(m);
  return report;
}

std::string format_mean_std(const EvalReport& report, int precision) {
  static const std::map<std::string, std::string> labels{
      {"auroc", "AUROC"}, {"auprc", "AUPRC"}, {"min_se_pplus", "min(Se,P+)"}};
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision);
  bool first = true;
  for (const auto& name : metric_names()) {
    auto it = report.metrics.find(name);
    if (it == report.metrics.end()) continue;
    if (!first) os << "  ";
    first = false;
    os << labels.at(name) << ' ' << it->second.mean << '(' << it->second.std << ')';
  }
  return os.str();
}

}  // namespace ctxrisk::metrics
