// ctxrisk: generate | train | eval | cv | inspect

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxrisk/data.hpp"
#include "ctxrisk/metrics.hpp"
#include "ctxrisk/model.hpp"
#include "ctxrisk/serialize.hpp"
#include "ctxrisk/synthetic.hpp"
#include "ctxrisk/train.hpp"
#include "json.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace ctxrisk;

namespace {

// Exit codes.
constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

const std::vector<std::string> kTrainKeys = {
    "lr",     "batch_size", "max_epochs",        "patience",      "lambda_decorr", "hidden",
    "heads",  "ffn",        "time_aware",        "per_position_keys", "test_fraction", "val_fraction"};

std::vector<std::string> with(std::vector<std::string> base, const std::vector<std::string>& more) {
  base.insert(base.end(), more.begin(), more.end());
  return base;
}

const std::map<std::string, std::vector<std::string>>& command_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"generate", {"seed", "out", "cases", "features", "baseline", "fast", "interaction", "label_noise",
                    "prevalence"}},
      {"train", with({"seed", "out", "data"}, kTrainKeys)},
      {"eval", {"seed", "out", "data", "model", "split", "subset", "bootstrap"}},
      {"cv", with({"seed", "out", "data", "folds", "bootstrap", "parallel_folds"}, kTrainKeys)},
      {"inspect", {"out", "data", "model", "filter", "final_attention"}},
  };
  return keys;
}

const std::map<std::string, std::string>& key_help() {
  static const std::map<std::string, std::string> help = {
      {"seed", "root random seed"},
      {"out", "output directory"},
      {"data", "dataset file (JSON lines)"},
      {"model", "model file written by train"},
      {"cases", "number of synthetic cases"},
      {"features", "number of dynamic features"},
      {"baseline", "number of baseline dimensions (first is numeric, the rest binary flags)"},
      {"fast", "number of fast-decay features, the rest are slow (-1: half)"},
      {"interaction", "planted interactions as feature:flag pairs, comma separated"},
      {"label_noise", "probability of redrawing a label from the prior"},
      {"prevalence", "target positive rate"},
      {"lr", "Adam learning rate"},
      {"batch_size", "cases per mini-batch"},
      {"max_epochs", "epoch limit"},
      {"patience", "epochs without validation AUPRC improvement before stopping"},
      {"lambda_decorr", "weight of the cross-head decorrelation loss (0 disables it)"},
      {"hidden", "hidden width d"},
      {"heads", "self-attention heads"},
      {"ffn", "feed-forward width (0: 2 * hidden)"},
      {"time_aware", "use elapsed time in the per-feature attention"},
      {"per_position_keys", "separate final-attention key matrix per position"},
      {"test_fraction", "share of cases held out for testing"},
      {"val_fraction", "share of the remaining cases used for early stopping"},
      {"split", "split.json from train; restricts eval to one subset"},
      {"subset", "subset of split to evaluate: train, val, test"},
      {"bootstrap", "bootstrap replicates (0: point estimates only)"},
      {"folds", "cross-validation folds"},
      {"parallel_folds", "train folds concurrently"},
      {"filter", "case selection: label=V or <baseline name>=V"},
      {"final_attention", "also export per-case final attention weights"},
  };
  return help;
}

void print_error(const std::string& command, const std::string& message) {
  json j = {{"error", message}};
  if (!command.empty()) j["command"] = command;
  std::cerr << j.dump() << std::endl;
}

fs::path prepare_out(const cli::RunConfig& cfg) {
  const fs::path out = cfg.str("out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw std::runtime_error("cannot create output directory " + out.string());
  return out;
}

std::uint64_t seed_of(const cli::RunConfig& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

std::size_t positive(const cli::RunConfig& cfg, const std::string& key) {
  const long long v = cfg.integer(key);
  if (v < 1) throw UsageError(key + " must be positive");
  return static_cast<std::size_t>(v);
}

train::TrainConfig train_config(const cli::RunConfig& cfg) {
  train::TrainConfig t;
  t.lr = cfg.num("lr");
  t.batch_size = positive(cfg, "batch_size");
  t.max_epochs = static_cast<int>(positive(cfg, "max_epochs"));
  t.patience = static_cast<int>(positive(cfg, "patience"));
  t.lambda_decorr = cfg.num("lambda_decorr");
  t.seed = seed_of(cfg);
  t.hidden = positive(cfg, "hidden");
  t.heads = positive(cfg, "heads");
  if (cfg.integer("ffn") < 0) throw UsageError("ffn must be non-negative");
  t.ffn = static_cast<std::size_t>(cfg.integer("ffn"));
  t.time_aware = cfg.flag("time_aware");
  t.per_position_keys = cfg.flag("per_position_keys");
  t.test_fraction = cfg.num("test_fraction");
  t.val_fraction = cfg.num("val_fraction");
  try {
    train::validate(t);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return t;
}

data::Dataset load_data(const cli::RunConfig& cfg) {
  const std::string path = cfg.str("data");
  if (path.empty()) throw UsageError("--data is required");
  return data::load_dataset(path);
}

io::SavedModel load_saved(const cli::RunConfig& cfg) {
  const std::string path = cfg.str("model");
  if (path.empty()) throw UsageError("--model is required");
  return io::load_model(path);
}

std::vector<int> labels_of(const data::Dataset& ds, const data::IdSet& ids) {
  std::vector<int> y;
  for (auto id : ids) y.push_back(ds.cases[id].label);
  return y;
}

ordered_json report_json(const metrics::EvalReport& r) {
  ordered_json out = ordered_json::object();
  for (const auto& name : metrics::metric_names()) {
    const auto& m = r.metrics.at(name);
    out[name] = {{"point", m.point}, {"mean", m.mean}, {"std", m.std}, {"replicates", m.replicates}};
  }
  return out;
}

std::string point_line(const metrics::EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "AUROC " << r.metrics.at("auroc").point << "  AUPRC "
     << r.metrics.at("auprc").point << "  min(Se,P+) " << r.metrics.at("min_se_pplus").point;
  return os.str();
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

int cmd_generate(const cli::RunConfig& cfg) {
  data::SyntheticSpec spec;
  spec.n_cases = static_cast<int>(positive(cfg, "cases"));
  spec.n_features = static_cast<int>(positive(cfg, "features"));
  spec.n_baseline = static_cast<int>(positive(cfg, "baseline"));
  spec.label_noise = cfg.num("label_noise");
  spec.prevalence = cfg.num("prevalence");
  spec.seed = seed_of(cfg);
  const long long fast = cfg.integer("fast");
  if (fast >= 0) {
    if (fast > spec.n_features) throw UsageError("fast exceeds the feature count");
    for (int f = 0; f < spec.n_features; ++f) {
      spec.decay_profile.push_back(f < fast ? data::DecayProfile::kFast : data::DecayProfile::kSlow);
    }
  }
  for (const auto& item : cfg.at("interaction")) {
    const auto text = item.get<std::string>();
    const auto colon = text.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(text);
      spec.interaction.emplace_back(std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1)));
    } catch (const std::exception&) {
      throw UsageError("interaction must look like feature:flag, got '" + text + "'");
    }
  }
  data::SyntheticResult result;
  try {
    result = data::generate_synthetic(spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto out = prepare_out(cfg);
  data::save_dataset(result.dataset, out / "dataset.jsonl");
  data::save_manifest(result.manifest, out / "manifest.json");
  cfg.write_resolved(out / "resolved_config.json");
  std::cout << "cases=" << result.dataset.cases.size() << " prevalence=" << std::fixed
            << std::setprecision(4) << result.manifest.realized_prevalence << std::endl;
  return 0;
}

int cmd_train(const cli::RunConfig& cfg) {
  const auto tc = train_config(cfg);
  const auto raw = load_data(cfg);
  const auto out = prepare_out(cfg);
  cfg.write_resolved(out / "resolved_config.json");

  const auto split = train::standard_split(raw.cases.size(), tc.test_fraction, tc.val_fraction, tc.seed);
  if (split.train.empty()) throw UsageError("split leaves no training cases");
  const auto ds = data::normalize(raw, split.train);
  const auto result = train::train(ds, split.train, split.val, tc);

  io::save_model({result.params, ds.feature_names, ds.baseline_names, ds.baseline_binary, ds.normalization},
                 out / "model.json");
  train::write_log(result.log, out / "train_log.jsonl");
  auto ids_of = [&](const data::IdSet& ids) {
    std::vector<std::string> names;
    for (auto id : ids) names.push_back(raw.cases[id].id);
    return names;
  };
  write_json(out / "split.json",
             {{"train", ids_of(split.train)}, {"val", ids_of(split.val)}, {"test", ids_of(split.test)}});

  std::cout << "epochs=" << result.log.size() << " best_epoch=" << result.best_epoch;
  if (std::isfinite(result.best_val_auprc)) {
    std::cout << " val_auprc=" << std::fixed << std::setprecision(4) << result.best_val_auprc;
  }
  std::cout << std::endl;
  const auto y = labels_of(ds, split.test);
  if (!split.test.empty() && std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0) {
    const auto scores = model::predict_scores(result.params, ds, split.test);
    std::cout << "test: " << point_line(metrics::point_report(scores, y)) << std::endl;
  }
  return 0;
}

data::IdSet select_from_split(const data::Dataset& ds, const std::string& split_path,
                              const std::string& subset) {
  std::ifstream in(split_path);
  if (!in) throw std::runtime_error("cannot read split file " + split_path);
  const json j = json::parse(in);
  if (!j.contains(subset)) throw UsageError("split file has no subset '" + subset + "'");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.cases.size(); ++i) index[ds.cases[i].id] = i;
  data::IdSet ids;
  for (const auto& name : j.at(subset)) {
    auto it = index.find(name.get<std::string>());
    if (it == index.end()) throw std::runtime_error("split case not in dataset: " + name.get<std::string>());
    ids.push_back(it->second);
  }
  return ids;
}

int cmd_eval(const cli::RunConfig& cfg) {
  const auto model = load_saved(cfg);
  const auto raw = load_data(cfg);
  io::check_compatible(model, raw);
  const long long reps = cfg.integer("bootstrap");
  if (reps < 0) throw UsageError("bootstrap must be non-negative");
  const auto out = prepare_out(cfg);
  cfg.write_resolved(out / "resolved_config.json");

  const auto ds = data::apply_normalization(raw, model.normalization);
  const auto ids = cfg.str("split").empty() ? data::all_ids(ds)
                                            : select_from_split(ds, cfg.str("split"), cfg.str("subset"));
  if (ids.empty()) throw std::runtime_error("no cases to evaluate");
  const auto scores = model::predict_scores(model.params, ds, ids);
  const auto y = labels_of(ds, ids);
  const auto report = reps > 0 ? metrics::bootstrap_eval(scores, y, static_cast<int>(reps), seed_of(cfg))
                               : metrics::point_report(scores, y);

  ordered_json j = {{"cases", ids.size()}, {"bootstrap", reps}, {"metrics", report_json(report)}};
  j["point"] = point_line(report);
  if (reps > 0) j["mean_std"] = metrics::format_mean_std(report);
  write_json(out / "eval_report.json", j);

  std::cout << "point: " << point_line(report) << std::endl;
  if (reps > 0) std::cout << "bootstrap(" << reps << "): " << metrics::format_mean_std(report) << std::endl;
  return 0;
}

int cmd_cv(const cli::RunConfig& cfg) {
  auto tc = train_config(cfg);
  tc.parallel_folds = cfg.flag("parallel_folds");
  const auto folds = positive(cfg, "folds");
  const long long reps = cfg.integer("bootstrap");
  if (reps < 0) throw UsageError("bootstrap must be non-negative");
  const auto raw = load_data(cfg);
  if (folds < 2 || folds > raw.cases.size()) throw UsageError("folds must be in [2, number of cases]");
  const auto out = prepare_out(cfg);
  cfg.write_resolved(out / "resolved_config.json");

  const auto cv = train::cross_validate(raw, folds, tc, static_cast<int>(reps));
  ordered_json j = {{"folds", folds}, {"fold_report", report_json(cv.folds)}};
  j["fold_mean_std"] = metrics::format_mean_std(cv.folds);
  j["pooled"] = point_line(cv.folds);
  if (reps > 0) {
    j["bootstrap"] = reps;
    j["bootstrap_report"] = report_json(cv.bootstrap);
    j["bootstrap_mean_std"] = metrics::format_mean_std(cv.bootstrap);
  }
  write_json(out / "cv_report.json", j);

  std::ofstream scores(out / "cv_scores.csv");
  scores << "id,label,score\n" << std::setprecision(17);
  for (std::size_t i = 0; i < raw.cases.size(); ++i) {
    scores << raw.cases[i].id << ',' << raw.cases[i].label << ',' << cv.oof_scores[i] << '\n';
  }

  std::cout << "folds(" << folds << "): " << metrics::format_mean_std(cv.folds) << std::endl;
  if (reps > 0) std::cout << "bootstrap(" << reps << "): " << metrics::format_mean_std(cv.bootstrap) << std::endl;
  return 0;
}

data::IdSet apply_filter(const data::Dataset& raw, const std::string& filter) {
  data::IdSet ids;
  if (filter.empty()) return data::all_ids(raw);
  const auto eq = filter.find('=');
  if (eq == std::string::npos) throw UsageError("filter must look like name=value");
  const std::string name = filter.substr(0, eq);
  double value = 0.0;
  try {
    value = std::stod(filter.substr(eq + 1));
  } catch (const std::exception&) {
    throw UsageError("filter value must be numeric: " + filter);
  }
  std::ptrdiff_t column = -1;
  if (name != "label") {
    auto it = std::find(raw.baseline_names.begin(), raw.baseline_names.end(), name);
    if (it == raw.baseline_names.end()) throw UsageError("filter names unknown field '" + name + "'");
    column = it - raw.baseline_names.begin();
  }
  for (std::size_t i = 0; i < raw.cases.size(); ++i) {
    const auto& c = raw.cases[i];
    const double v = column < 0 ? c.label : c.baseline[static_cast<std::size_t>(column)];
    if (v == value) ids.push_back(i);
  }
  return ids;
}

int cmd_inspect(const cli::RunConfig& cfg) {
  const auto model = load_saved(cfg);
  const auto& p = model.params;
  std::vector<std::string> positions = model.feature_names;
  positions.push_back("baseline");

  // Validate the data and the selection before writing anything.
  const bool with_data = !cfg.str("data").empty();
  data::Dataset ds;
  data::IdSet ids;
  if (with_data) {
    const auto raw = load_data(cfg);
    io::check_compatible(model, raw);
    ids = apply_filter(raw, cfg.str("filter"));
    if (ids.empty()) throw std::runtime_error("filter '" + cfg.str("filter") + "' selects no cases");
    ds = data::apply_normalization(raw, model.normalization);
  }

  const auto out = prepare_out(cfg);
  cfg.write_resolved(out / "resolved_config.json");
  {
    const auto betas = model::decay_rates(p);
    std::ofstream f(out / "decay_rates.csv");
    f << "feature,decay_rate\n" << std::setprecision(10);
    for (std::size_t n = 0; n < betas.size(); ++n) f << model.feature_names[n] << ',' << betas[n] << '\n';
  }
  if (!with_data) {
    std::cout << "decay rates written; pass --data for attention exports" << std::endl;
    return 0;
  }

  const std::size_t P = positions.size();
  const std::size_t M = p.config.dims.heads;
  std::vector<double> mean(M * P * P, 0.0);
  std::vector<model::AttentionTrace> traces(ids.size());
  const auto n = static_cast<std::ptrdiff_t>(ids.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    traces[static_cast<std::size_t>(i)] = model::trace_case(ds.cases[ids[static_cast<std::size_t>(i)]], p);
  }
  for (const auto& tr : traces)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += tr.self_attention[k] / static_cast<double>(ids.size());

  for (std::size_t m = 0; m < M; ++m) {
    std::ofstream f(out / ("attention_head" + std::to_string(m) + ".csv"));
    f << "query";
    for (const auto& name : positions) f << ',' << name;
    f << '\n' << std::setprecision(10);
    for (std::size_t i = 0; i < P; ++i) {
      f << positions[i];
      for (std::size_t j = 0; j < P; ++j) f << ',' << mean[(m * P + i) * P + j];
      f << '\n';
    }
  }
  if (cfg.flag("final_attention")) {
    std::ofstream f(out / "final_attention.csv");
    f << "id,label";
    for (const auto& name : positions) f << ',' << name;
    f << ",y_hat\n" << std::setprecision(10);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& c = ds.cases[ids[i]];
      f << c.id << ',' << c.label;
      for (double a : traces[i].final_alphas) f << ',' << a;
      f << ',' << traces[i].y_hat << '\n';
    }
  }
  std::cout << "selected=" << ids.size() << " heads=" << M << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-aware attention risk model: data generation, training and evaluation"};
  app.require_subcommand(1);

  struct Command {
    CLI::App* app;
    std::string config_path;
    std::map<std::string, std::string> texts;
  };
  std::map<std::string, Command> commands;
  const std::map<std::string, std::string> descriptions = {
      {"generate", "write a synthetic dataset with planted structure"},
      {"train", "train a model with early stopping"},
      {"eval", "score a dataset with a trained model"},
      {"cv", "k-fold cross-validation"},
      {"inspect", "export decay rates and attention maps"}};
  for (const auto& [name, keys] : command_keys()) {
    auto& c = commands[name];
    c.app = app.add_subcommand(name, descriptions.at(name));
    c.app->add_option("--config", c.config_path, "JSON config file");
    for (const auto& key : keys) {
      c.app->add_option("--" + cli::flag_name(key), c.texts[key], key_help().at(key));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("", e.what());
    return kUsageError;
  }

  for (auto& [name, c] : commands) {
    if (!c.app->parsed()) continue;
    try {
      cli::RunConfig cfg(command_keys().at(name));
      try {
        if (!c.config_path.empty()) cfg.merge_file(c.config_path);
        for (const auto& key : command_keys().at(name)) {
          if (c.app->count("--" + cli::flag_name(key)) > 0) cfg.set_from_text(key, c.texts[key]);
        }
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (name == "generate") return cmd_generate(cfg);
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg);
      if (name == "cv") return cmd_cv(cfg);
      return cmd_inspect(cfg);
    } catch (const UsageError& e) {
      print_error(name, e.what());
      return kUsageError;
    } catch (const std::exception& e) {
      print_error(name, e.what());
      return kRuntimeError;
    }
  }
  return kUsageError;
}
