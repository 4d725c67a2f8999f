#include "ctxrisk/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace ctxrisk::data {

using nlohmann::json;

std::string to_string(DecayProfile p) { return p == DecayProfile::kFast ? "fast" : "slow"; }

DecayProfile decay_profile_from_string(const std::string& s) {
  if (s == "fast") return DecayProfile::kFast;
  if (s == "slow") return DecayProfile::kSlow;
  throw std::invalid_argument("unknown decay profile '" + s + "'");
}

double latest_value(const PatientCase& c, std::size_t feature) {
  return c.feature_row(feature)[c.visits() - 1];
}

double time_weighted_mean(const PatientCase& c, std::size_t feature) {
  const double* x = c.feature_row(feature);
  const std::size_t t_count = c.visits();
  if (t_count == 1) return x[0];
  double area = 0.0;
  for (std::size_t t = 1; t < t_count; ++t) {
    area += 0.5 * (x[t - 1] + x[t]) * (c.timestamps[t] - c.timestamps[t - 1]);
  }
  return area / (c.timestamps[t_count - 1] - c.timestamps[0]);
}

namespace {

SyntheticSpec resolve(SyntheticSpec spec) {
  if (spec.n_features < 1 || spec.n_baseline < 1 || spec.n_cases < 1) {
    throw std::invalid_argument("synthetic spec needs at least one feature, baseline dim and case");
  }
  if (spec.label_noise < 0.0 || spec.label_noise >= 1.0) {
    throw std::invalid_argument("label_noise must be in [0, 1)");
  }
  if (spec.prevalence <= 0.0 || spec.prevalence >= 1.0) {
    throw std::invalid_argument("prevalence must be in (0, 1)");
  }
  if (spec.min_visits < 1 || spec.max_visits < spec.min_visits) {
    throw std::invalid_argument("invalid visit count range");
  }
  const auto n = static_cast<std::size_t>(spec.n_features);
  if (spec.decay_profile.empty()) {
    const std::size_t n_fast = (n + 1) / 2;
    for (std::size_t f = 0; f < n; ++f) {
      spec.decay_profile.push_back(f < n_fast ? DecayProfile::kFast : DecayProfile::kSlow);
    }
  }
  if (spec.decay_profile.size() != n) throw std::invalid_argument("decay_profile length mismatch");
  if (spec.feature_weight.empty()) spec.feature_weight.assign(n, 1.0);
  if (spec.feature_weight.size() != n) throw std::invalid_argument("feature_weight length mismatch");
  for (auto [f, b] : spec.interaction) {
    if (f < 0 || f >= spec.n_features) throw std::invalid_argument("interaction feature out of range");
    if (b < 0 || b >= spec.n_baseline) throw std::invalid_argument("interaction flag out of range");
    if (spec.n_baseline >= 2 && b == 0) {
      throw std::invalid_argument("baseline dimension 0 is numeric, not a flag");
    }
  }
  return spec;
}

}  // namespace

SyntheticResult generate_synthetic(const SyntheticSpec& raw_spec) {
  const SyntheticSpec spec = resolve(raw_spec);
  const auto n = static_cast<std::size_t>(spec.n_features);
  const auto s_dim = static_cast<std::size_t>(spec.n_baseline);
  const bool has_numeric = s_dim >= 2;

  SyntheticResult result;
  Dataset& ds = result.dataset;
  for (std::size_t f = 0; f < n; ++f) ds.feature_names.push_back("feature_" + std::to_string(f));
  for (std::size_t s = 0; s < s_dim; ++s) {
    ds.baseline_names.push_back(has_numeric && s == 0 ? "age" : "flag_" + std::to_string(s));
    ds.baseline_binary.push_back(!(has_numeric && s == 0));
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> gap(1.0 / spec.mean_gap);
  std::uniform_int_distribution<int> visit_count(spec.min_visits, spec.max_visits);
  std::bernoulli_distribution flag(0.5);

  const double ln2 = std::log(2.0);
  result.scores.reserve(static_cast<std::size_t>(spec.n_cases));
  for (int i = 0; i < spec.n_cases; ++i) {
    PatientCase c;
    c.id = "p" + std::to_string(i);
    for (std::size_t s = 0; s < s_dim; ++s) {
      c.baseline.push_back(has_numeric && s == 0 ? normal(rng) : (flag(rng) ? 1.0 : 0.0));
    }
    const auto t_count = static_cast<std::size_t>(visit_count(rng));
    c.timestamps.resize(t_count);
    c.timestamps[0] = 0.0;
    for (std::size_t t = 1; t < t_count; ++t) {
      double g = gap(rng);
      if (!(g > 0.0)) g = 1e-3;
      c.timestamps[t] = c.timestamps[t - 1] + g;
    }
    c.records.assign(n * t_count, 0.0);
    for (std::size_t f = 0; f < n; ++f) {
      const bool fast = spec.decay_profile[f] == DecayProfile::kFast;
      const double level = fast ? 0.0 : normal(rng);
      const double half_life = fast ? spec.fast_half_life : spec.slow_half_life;
      double* row = c.records.data() + f * t_count;
      row[0] = level + normal(rng);
      for (std::size_t t = 1; t < t_count; ++t) {
        const double a = std::exp(-ln2 * (c.timestamps[t] - c.timestamps[t - 1]) / half_life);
        row[t] = level + (row[t - 1] - level) * a + std::sqrt(1.0 - a * a) * normal(rng);
      }
    }

    double score = 0.0;
    for (std::size_t f = 0; f < n; ++f) {
      const double term = spec.decay_profile[f] == DecayProfile::kFast ? latest_value(c, f)
                                                                       : time_weighted_mean(c, f);
      score += spec.feature_weight[f] * term;
    }
    for (auto [f, b] : spec.interaction) {
      score += spec.interaction_weight * latest_value(c, static_cast<std::size_t>(f)) *
               c.baseline[static_cast<std::size_t>(b)];
    }
    result.scores.push_back(score);
    ds.cases.push_back(std::move(c));
  }

  // Threshold at the (1 - prevalence) quantile of the planted scores.
  std::vector<double> sorted = result.scores;
  std::sort(sorted.begin(), sorted.end());
  const auto n_cases = sorted.size();
  auto n_pos = static_cast<std::size_t>(std::llround(spec.prevalence * static_cast<double>(n_cases)));
  n_pos = std::min(n_pos, n_cases);
  const double threshold = n_pos == n_cases ? sorted.front() - 1.0 : sorted[n_cases - n_pos - 1];

  std::bernoulli_distribution resample(spec.label_noise);
  std::bernoulli_distribution prior(spec.prevalence);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n_cases; ++i) {
    int label = result.scores[i] > threshold ? 1 : 0;
    if (spec.label_noise > 0.0 && resample(rng)) label = prior(rng) ? 1 : 0;
    ds.cases[i].label = label;
    positives += static_cast<std::size_t>(label);
  }

  result.manifest.spec = spec;
  result.manifest.feature_names = ds.feature_names;
  result.manifest.baseline_names = ds.baseline_names;
  result.manifest.threshold = threshold;
  result.manifest.realized_prevalence =
      static_cast<double>(positives) / static_cast<double>(n_cases);
  return result;
}

void save_manifest(const SyntheticManifest& m, const std::filesystem::path& path) {
  const auto& s = m.spec;
  json profile = json::array();
  for (auto p : s.decay_profile) profile.push_back(to_string(p));
  json inter = json::array();
  for (auto [f, b] : s.interaction) inter.push_back({{"feature", f}, {"flag", b}});
  json j = {{"seed", s.seed},
            {"n_features", s.n_features},
            {"n_baseline", s.n_baseline},
            {"n_cases", s.n_cases},
            {"feature_names", m.feature_names},
            {"baseline_names", m.baseline_names},
            {"decay_profile", profile},
            {"feature_weight", s.feature_weight},
            {"interaction", inter},
            {"interaction_weight", s.interaction_weight},
            {"label_noise", s.label_noise},
            {"prevalence", s.prevalence},
            {"fast_half_life", s.fast_half_life},
            {"slow_half_life", s.slow_half_life},
            {"mean_gap", s.mean_gap},
            {"min_visits", s.min_visits},
            {"max_visits", s.max_visits},
            {"threshold", m.threshold},
            {"realized_prevalence", m.realized_prevalence}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << j.dump(2) << '\n';
}

SyntheticManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  const json j = json::parse(in);
  SyntheticManifest m;
  auto& s = m.spec;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_features = j.at("n_features").get<int>();
  s.n_baseline = j.at("n_baseline").get<int>();
  s.n_cases = j.at("n_cases").get<int>();
  for (const auto& p : j.at("decay_profile")) s.decay_profile.push_back(decay_profile_from_string(p));
  s.feature_weight = j.at("feature_weight").get<std::vector<double>>();
  for (const auto& e : j.at("interaction")) {
    s.interaction.emplace_back(e.at("feature").get<int>(), e.at("flag").get<int>());
  }
  s.interaction_weight = j.at("interaction_weight").get<double>();
  s.label_noise = j.at("label_noise").get<double>();
  s.prevalence = j.at("prevalence").get<double>();
  s.fast_half_life = j.at("fast_half_life").get<double>();
  s.slow_half_life = j.at("slow_half_life").get<double>();
  s.mean_gap = j.at("mean_gap").get<double>();
  s.min_visits = j.at("min_visits").get<int>();
  s.max_visits = j.at("max_visits").get<int>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.baseline_names = j.at("baseline_names").get<std::vector<std::string>>();
  m.threshold = j.at("threshold").get<double>();
  m.realized_prevalence = j.at("realized_prevalence").get<double>();
  return m;
}

}  // namespace ctxrisk::data
