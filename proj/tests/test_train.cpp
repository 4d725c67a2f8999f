#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "ctxrisk/serialize.hpp"
#include "ctxrisk/synthetic.hpp"
#include "ctxrisk/train.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace ctxrisk;

namespace {

train::TrainConfig small_config() {
  train::TrainConfig c;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.batch_size = 8;
  c.max_epochs = 6;
  c.patience = 3;
  c.seed = 5;
  return c;
}

data::Dataset small_synthetic(int cases, std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.n_features = 2;
  spec.n_baseline = 2;
  spec.n_cases = cases;
  spec.min_visits = 3;
  spec.max_visits = 5;
  spec.seed = seed;
  return data::generate_synthetic(spec).dataset;
}

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "ctxrisk_test_train";
  std::filesystem::create_directories(dir);
  return dir;
}

bool same_values(const ModelParams& a, const ModelParams& b) {
  auto ib = b.store.begin();
  for (const auto& e : a.store) {
    const auto x = e.value.values();
    const auto y = (ib++)->value.values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("serial and parallel batch gradients agree") {
  const auto ds = testing::random_dataset(3, 2, 5, 12, 1);
  auto a = testing::jittered_model(testing::tiny_config(3, 2, 8, 2, 16), 1);
  auto b = a;
  data::IdSet batch;
  for (std::size_t i = 0; i < 12; ++i) batch.push_back(i);
  a.store.zero_grad();
  b.store.zero_grad();
  const auto la = model::batch_loss_and_grad(a, ds, batch, 1.0, model::Exec::kSerial);
  const auto lb = model::batch_loss_and_grad(b, ds, batch, 1.0, model::Exec::kParallel);
  CHECK(la.loss == lb.loss);
  auto ib = b.store.begin();
  for (auto& e : a.store) {
    const auto ga = e.grad.values();
    const auto gb = (ib++)->grad.values();
    for (std::size_t k = 0; k < ga.size(); ++k) CHECK(std::abs(ga[k] - gb[k]) <= 1e-12 * (1.0 + std::abs(ga[k])));
  }
  const auto sa = model::predict_scores(a, ds, batch, model::Exec::kSerial);
  const auto sb = model::predict_scores(a, ds, batch, model::Exec::kParallel);
  CHECK(sa == sb);
}

TEST_CASE("training reduces the loss on a separable toy set") {
  data::Dataset ds = testing::random_dataset(2, 1, 3, 8, 2);
  for (auto& c : ds.cases) {
    for (std::size_t t = 0; t < c.visits(); ++t) c.records[t] = c.label ? 1.5 : -1.5;
  }
  auto cfg = small_config();
  cfg.lambda_decorr = 0.0;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  const auto ids = data::all_ids(ds);
  const auto init = init_model(train::model_config(cfg, ds), metrics::derive_seed(cfg.seed, 0));
  const double before = train::mean_cross_entropy(init, ds, ids);
  const auto res = train::train(ds, ids, {}, cfg);
  CHECK(res.log.size() == 50);
  CHECK(train::mean_cross_entropy(res.params, ds, ids) < before);
  for (const auto& r : res.log) CHECK(r.lambda_decorr == 0.0);
}

TEST_CASE("training is deterministic under a seed") {
  const auto ds = data::normalize(small_synthetic(60, 3), data::all_ids(small_synthetic(60, 3)));
  const auto split = train::standard_split(ds.cases.size(), 0.0, 0.3, 1);
  const auto cfg = small_config();
  const auto a = train::train(ds, split.train, split.val, cfg);
  const auto b = train::train(ds, split.train, split.val, cfg);
  CHECK(same_values(a.params, b.params));
  CHECK(a.best_epoch == b.best_epoch);
  auto other = cfg;
  other.seed = 6;
  CHECK_FALSE(same_values(a.params, train::train(ds, split.train, split.val, other).params));
}

TEST_CASE("early stopping restores the best validation parameters") {
  const auto raw = small_synthetic(80, 4);
  const auto ds = data::normalize(raw, data::all_ids(raw));
  const auto split = train::standard_split(ds.cases.size(), 0.0, 0.3, 2);
  auto cfg = small_config();
  cfg.max_epochs = 12;
  cfg.patience = 2;
  std::vector<ModelParams> snapshots;
  const auto res = train::train(ds, split.train, split.val, cfg,
                                [&](const train::EpochRecord&, const ModelParams& p) {
                                  snapshots.push_back(p);
                                  return false;
                                });
  REQUIRE(res.best_epoch >= 1);
  CHECK(snapshots.size() == res.log.size());
  CHECK(same_values(res.params, snapshots[static_cast<std::size_t>(res.best_epoch - 1)]));
  double best = -1.0;
  for (const auto& r : res.log) best = std::max(best, r.val_auprc);
  CHECK(res.best_val_auprc == best);
  if (res.log.size() < 12) CHECK(res.log.size() == static_cast<std::size_t>(res.best_epoch + cfg.patience));

  std::vector<int> labels;
  for (auto id : split.val) labels.push_back(ds.cases[id].label);
  CHECK(metrics::auprc(model::predict_scores(res.params, ds, split.val), labels) == res.best_val_auprc);
}

TEST_CASE("training rejects bad input") {
  auto ds = testing::random_dataset(2, 1, 3, 6, 3);
  auto cfg = small_config();
  CHECK_THROWS(train::train(ds, {0, 1, 2}, {2, 3}, cfg));
  auto bad = cfg;
  bad.patience = 10;
  CHECK_THROWS(train::train(ds, {0, 1}, {}, bad));
  ds.cases[1].records[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(train::train(ds, {0, 1, 2}, {}, cfg), doctest::Contains("non-finite loss at epoch 1"),
                       std::runtime_error);
}

TEST_CASE("training log round trip") {
  std::vector<train::EpochRecord> log{{1, 0.7, 0.4, 0.6, 1.0, true},
                                      {2, 0.5, std::numeric_limits<double>::quiet_NaN(), 0.65, 1.0, false}};
  const auto p = temp_dir() / "log.jsonl";
  train::write_log(log, p);
  const auto back = train::read_log(p);
  REQUIRE(back.size() == 2);
  CHECK(back[0].train_loss == 0.7);
  CHECK(std::isnan(back[1].val_auprc));
  CHECK(back[1].val_auroc == 0.65);
  CHECK_FALSE(back[1].improved);
}

TEST_CASE("model file round trip reproduces scores") {
  const auto raw = small_synthetic(40, 5);
  const auto ds = data::normalize(raw, data::all_ids(raw));
  auto cfg = small_config();
  cfg.per_position_keys = true;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  const auto res = train::train(ds, data::all_ids(ds), {}, cfg);
  io::SavedModel m{res.params, ds.feature_names, ds.baseline_names, ds.baseline_binary, ds.normalization};
  const auto p = temp_dir() / "model.json";
  io::save_model(m, p);
  const auto back = io::load_model(p);
  CHECK(same_values(back.params, res.params));
  CHECK(back.params.config.per_position_keys);
  CHECK(back.normalization.feature_mean == ds.normalization.feature_mean);
  const auto ids = data::all_ids(ds);
  CHECK(model::predict_scores(back.params, ds, ids) == model::predict_scores(res.params, ds, ids));
  CHECK_NOTHROW(io::check_compatible(back, ds));

  auto renamed = ds;
  renamed.feature_names[1] = "other";
  CHECK_THROWS_WITH_AS(io::check_compatible(back, renamed), doctest::Contains("other"), std::invalid_argument);
}

TEST_CASE("two-fold cross-validation covers every case once") {
  const auto raw = small_synthetic(40, 6);
  auto cfg = small_config();
  cfg.max_epochs = 2;
  cfg.patience = 1;
  const auto cv = train::cross_validate(raw, 2, cfg, 20);
  for (const auto& name : metrics::metric_names()) {
    CHECK(cv.folds.metrics.at(name).replicates.size() == 2);
    CHECK(cv.bootstrap.metrics.at(name).replicates.size() == 20);
  }
  for (double s : cv.oof_scores) CHECK(std::isfinite(s));
  CHECK(cv.logs.size() == 2);

  auto par = cfg;
  par.parallel_folds = true;
  const auto cv2 = train::cross_validate(raw, 2, par, 20);
  CHECK(metrics::format_mean_std(cv2.folds) == metrics::format_mean_std(cv.folds));
  CHECK_THROWS(train::cross_validate(raw, 41, cfg));
}
