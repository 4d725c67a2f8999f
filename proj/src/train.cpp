#include "ctxrisk/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ctxrisk::train {

using nlohmann::json;

void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (c.max_epochs < 1) throw std::invalid_argument("max_epochs must be positive");
  if (c.patience < 1 || c.patience > c.max_epochs) {
    throw std::invalid_argument("patience must be in [1, max_epochs]");
  }
  if (c.lambda_decorr < 0.0) throw std::invalid_argument("lambda_decorr must be non-negative");
  if (c.hidden == 0 || c.heads == 0) throw std::invalid_argument("model dims must be positive");
  if (c.test_fraction < 0.0 || c.test_fraction >= 1.0 || c.val_fraction < 0.0 ||
      c.val_fraction >= 1.0) {
    throw std::invalid_argument("split fractions must be in [0, 1)");
  }
}

ModelConfig model_config(const TrainConfig& c, const data::Dataset& ds) {
  ModelConfig m;
  m.dims.n_features = ds.n_features();
  m.dims.n_baseline = ds.n_baseline();
  m.dims.hidden = c.hidden;
  m.dims.heads = c.heads;
  m.dims.ffn = c.ffn == 0 ? 2 * c.hidden : c.ffn;
  m.time_aware = c.time_aware;
  m.per_position_keys = c.per_position_keys;
  validate_config(m);
  return m;
}

double mean_cross_entropy(const ModelParams& params, const data::Dataset& ds,
                          const data::IdSet& ids) {
  return model::batch_loss(params, ds, ids, 0.0).cross_entropy;
}

namespace {

bool has_both_classes(const data::Dataset& ds, const data::IdSet& ids) {
  bool pos = false;
  bool neg = false;
  for (auto id : ids) (ds.cases[id].label == 1 ? pos : neg) = true;
  return pos && neg;
}

}  // namespace

TrainResult train(const data::Dataset& ds, const data::IdSet& train_ids,
                  const data::IdSet& val_ids, const TrainConfig& config,
                  const EpochCallback& callback) {
  validate(config);
  if (train_ids.empty()) throw std::invalid_argument("no training cases");
  const std::set<std::size_t> train_set(train_ids.begin(), train_ids.end());
  for (auto v : val_ids) {
    if (train_set.count(v)) throw std::invalid_argument("training and validation sets overlap");
  }

  ModelParams params = init_model(model_config(config, ds), metrics::derive_seed(config.seed, 0));
  const numerics::AdamOptions adam{config.lr, 0.9, 0.999, 1e-8};
  const bool can_validate = has_both_classes(ds, val_ids);

  TrainResult result;
  result.best_val_auprc = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches = data::make_batches(ds, train_ids, config.batch_size,
                                            metrics::derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      params.store.zero_grad();
      const auto bl = model::batch_loss_and_grad(params, ds, batch, config.lambda_decorr, config.exec);
      if (!std::isfinite(bl.loss)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " batch " << bi;
        throw std::runtime_error(os.str());
      }
      numerics::adam_step(params.store, adam);
      loss_sum += bl.loss * static_cast<double>(batch.size());
      seen += batch.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.lambda_decorr = config.lambda_decorr;
    rec.val_auprc = std::numeric_limits<double>::quiet_NaN();
    rec.val_auroc = std::numeric_limits<double>::quiet_NaN();
    if (can_validate) {
      const auto scores = model::predict_scores(params, ds, val_ids, config.exec);
      std::vector<int> labels;
      for (auto id : val_ids) labels.push_back(ds.cases[id].label);
      rec.val_auprc = metrics::auprc(scores, labels);
      rec.val_auroc = metrics::auroc(scores, labels);
      if (rec.val_auprc > result.best_val_auprc) {
        rec.improved = true;
        result.best_val_auprc = rec.val_auprc;
        result.best_epoch = epoch;
        result.params = params;
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      rec.improved = true;
      result.best_epoch = epoch;
    }
    result.log.push_back(rec);

    const bool stop_requested = callback && callback(rec, params);
    if (stop_requested || (can_validate && since_best >= config.patience)) break;
  }
  if (!can_validate) {
    result.params = std::move(params);
    result.best_val_auprc = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

Split standard_split(std::size_t n_cases, double test_fraction, double val_fraction,
                     std::uint64_t seed) {
  data::IdSet all(n_cases);
  for (std::size_t i = 0; i < n_cases; ++i) all[i] = i;
  Split s;
  auto [rest, test] = data::holdout_split(all, test_fraction, metrics::derive_seed(seed, 7001));
  auto [train_ids, val] = data::holdout_split(rest, val_fraction, metrics::derive_seed(seed, 7002));
  s.train = std::move(train_ids);
  s.val = std::move(val);
  s.test = std::move(test);
  return s;
}

CrossValidationResult cross_validate(const data::Dataset& raw, std::size_t k,
                                     const TrainConfig& config, int bootstrap_reps) {
  validate(config);
  const auto folds = data::split_folds(raw, k, metrics::derive_seed(config.seed, 9001));
  CrossValidationResult out;
  out.oof_scores.assign(raw.cases.size(), std::numeric_limits<double>::quiet_NaN());
  out.logs.resize(k);
  std::vector<std::vector<double>> fold_metrics(k);
  std::vector<std::string> errors(k);

  auto run_fold = [&](std::size_t f, model::Exec exec) {
    data::IdSet rest;
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) rest.insert(rest.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(rest.begin(), rest.end());
    auto [train_ids, val_ids] =
        data::holdout_split(rest, config.val_fraction, metrics::derive_seed(config.seed, 9100 + f));
    const auto ds = data::normalize(raw, train_ids);
    TrainConfig fc = config;
    fc.seed = metrics::derive_seed(config.seed, 9200 + f);
    fc.exec = exec;
    auto res = train(ds, train_ids, val_ids, fc);
    const auto& test = folds[f];
    const auto scores = model::predict_scores(res.params, ds, test, exec);
    std::vector<int> labels;
    for (auto id : test) labels.push_back(ds.cases[id].label);
    for (std::size_t i = 0; i < test.size(); ++i) out.oof_scores[test[i]] = scores[i];
    const auto rep = metrics::point_report(scores, labels);
    for (const auto& name : metrics::metric_names()) {
      fold_metrics[f].push_back(rep.metrics.at(name).point);
    }
    out.logs[f] = std::move(res.log);
  };

  const auto kk = static_cast<std::ptrdiff_t>(k);
  if (config.parallel_folds) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t fi = 0; fi < kk; ++fi) {
      const auto f = static_cast<std::size_t>(fi);
      try {
        run_fold(f, model::Exec::kSerial);
      } catch (const std::exception& e) {
        errors[f] = e.what();
      }
    }
  } else {
    for (std::size_t f = 0; f < k; ++f) {
      try {
        run_fold(f, config.exec);
      } catch (const std::exception& e) {
        errors[f] = e.what();
      }
    }
  }
  for (std::size_t f = 0; f < k; ++f) {
    if (!errors[f].empty()) {
      throw std::runtime_error("fold " + std::to_string(f) + ": " + errors[f]);
    }
  }

  std::vector<int> labels;
  for (const auto& c : raw.cases) labels.push_back(c.label);
  out.folds = metrics::point_report(out.oof_scores, labels);
  const auto& names = metrics::metric_names();
  for (std::size_t m = 0; m < names.size(); ++m) {
    auto& summary = out.folds.metrics[names[m]];
    summary.replicates.clear();
    for (std::size_t f = 0; f < k; ++f) summary.replicates.push_back(fold_metrics[f][m]);
    metrics::summarize(summary);
  }
  if (bootstrap_reps > 0) {
    out.bootstrap = metrics::bootstrap_eval(out.oof_scores, labels, bootstrap_reps,
                                            metrics::derive_seed(config.seed, 9300));
  }
  return out;
}

namespace {

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double null_to_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

void write_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path.string());
  for (const auto& r : log) {
    json j = {{"epoch", r.epoch},
              {"train_loss", nan_to_null(r.train_loss)},
              {"val_auprc", nan_to_null(r.val_auprc)},
              {"val_auroc", nan_to_null(r.val_auroc)},
              {"lambda_decorr", r.lambda_decorr},
              {"improved", r.improved}};
    out << j.dump() << '\n';
  }
}

std::vector<EpochRecord> read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read training log: " + path.string());
  std::vector<EpochRecord> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.train_loss = null_to_nan(j.at("train_loss"));
    r.val_auprc = null_to_nan(j.at("val_auprc"));
    r.val_auroc = null_to_nan(j.at("val_auroc"));
    r.lambda_decorr = j.at("lambda_decorr").get<double>();
    r.improved = j.at("improved").get<bool>();
    log.push_back(r);
  }
  return log;
}

}  // namespace ctxrisk::train
