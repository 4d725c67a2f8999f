#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "ctxrisk/data.hpp"
#include "ctxrisk/synthetic.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace ctxrisk;
using namespace ctxrisk::data;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ctxrisk_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kHeader = R"({"feature_names":["hr","sbp"],"baseline_names":["age","diabetes"]})";

}  // namespace

TEST_CASE("load a single valid patient") {
  const auto p = temp_path("one.jsonl");
  write_text(p, std::string(kHeader) + "\n" +
                    R"({"id":"p1","baseline":[63,1],"visits":[{"t":0,"values":[80,120]},{"t":4.5,"values":[88,110]}],"label":1})"
                    "\n");
  const auto ds = load_dataset(p);
  REQUIRE(ds.cases.size() == 1);
  const auto& c = ds.cases[0];
  CHECK(c.id == "p1");
  CHECK(c.visits() == 2);
  CHECK(c.feature_row(0)[1] == 88.0);
  CHECK(c.feature_row(1)[0] == 120.0);
  CHECK(c.label == 1);
  CHECK(ds.baseline_binary == std::vector<bool>{false, true});
}

TEST_CASE("visit values keyed by feature name") {
  const auto p = temp_path("named.jsonl");
  write_text(p, std::string(kHeader) + "\n" +
                    R"({"id":"p1","baseline":[63,0],"visits":[{"t":0,"values":{"sbp":120,"hr":80}}],"label":0})"
                    "\n");
  const auto ds = load_dataset(p);
  CHECK(ds.cases[0].feature_row(0)[0] == 80.0);
  CHECK(ds.cases[0].feature_row(1)[0] == 120.0);

  write_text(p, std::string(kHeader) + "\n" +
                    R"({"id":"p1","baseline":[63,0],"visits":[{"t":0,"values":{"sbp":120,"temp":37}}],"label":0})"
                    "\n");
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("temp"), std::exception);
}

TEST_CASE("rejected records name the case") {
  const auto p = temp_path("bad.jsonl");
  write_text(p, std::string(kHeader) + "\n" +
                    R"({"id":"tie7","baseline":[1,0],"visits":[{"t":0,"values":[1,2]},{"t":5,"values":[1,2]},{"t":5,"values":[1,2]}],"label":0})"
                    "\n");
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("tie7"), std::exception);

  write_text(p, std::string(kHeader) + "\n" +
                    R"({"id":"empty3","baseline":[1,0],"visits":[],"label":0})"
                    "\n");
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("empty3"), std::exception);

  write_text(p, std::string(kHeader) + "\n" +
                    R"({"id":"short","baseline":[1,0],"visits":[{"t":0,"values":[1]}],"label":0})"
                    "\n");
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("short"), std::exception);
}

TEST_CASE("save/load round trip is bit exact") {
  auto ds = testing::random_dataset(3, 2, 5, 20, 77);
  ds.baseline_binary = {false, true};
  for (auto& c : ds.cases) c.baseline[1] = static_cast<double>(c.label);
  const auto p = temp_path("roundtrip.jsonl");
  save_dataset(ds, p);
  const auto back = load_dataset(p);
  REQUIRE(back.cases.size() == ds.cases.size());
  CHECK(back.feature_names == ds.feature_names);
  CHECK(back.baseline_names == ds.baseline_names);
  CHECK(back.baseline_binary == ds.baseline_binary);
  for (std::size_t i = 0; i < ds.cases.size(); ++i) {
    CHECK(back.cases[i].id == ds.cases[i].id);
    CHECK(back.cases[i].timestamps == ds.cases[i].timestamps);
    CHECK(back.cases[i].records == ds.cases[i].records);
    CHECK(back.cases[i].baseline == ds.cases[i].baseline);
    CHECK(back.cases[i].label == ds.cases[i].label);
  }
}

TEST_CASE("normalize examples") {
  Dataset ds;
  ds.feature_names = {"constant", "two_point"};
  ds.baseline_names = {"flag"};
  ds.baseline_binary = {true};
  for (int i = 0; i < 2; ++i) {
    PatientCase c;
    c.id = "c" + std::to_string(i);
    c.baseline = {static_cast<double>(i)};
    c.timestamps = {0.0};
    c.records = {5.0, 2.0 * i};
    c.label = i;
    ds.cases.push_back(c);
  }
  const auto n = normalize(ds, {0, 1});
  CHECK(n.cases[0].records[0] == 0.0);
  CHECK(n.cases[1].records[0] == 0.0);
  CHECK(n.normalization.feature_mean[1] == 1.0);
  CHECK(n.normalization.feature_std[1] == 1.0);
  CHECK(n.cases[1].records[1] == 1.0);
  CHECK(n.cases[0].records[1] == -1.0);
  CHECK(n.cases[1].baseline[0] == 1.0);  // binary flag untouched
}

TEST_CASE("normalized training columns are standardized and normalization is idempotent") {
  const auto ds = testing::random_dataset(3, 2, 6, 40, 5);
  IdSet train;
  for (std::size_t i = 0; i < 30; ++i) train.push_back(i);
  const auto n = normalize(ds, train);
  for (std::size_t f = 0; f < 3; ++f) {
    double sum = 0.0;
    double count = 0.0;
    for (auto id : train) {
      const auto& c = n.cases[id];
      for (std::size_t t = 0; t < c.visits(); ++t) {
        sum += c.feature_row(f)[t];
        count += 1.0;
      }
    }
    const double mean = sum / count;
    double var = 0.0;
    for (auto id : train) {
      const auto& c = n.cases[id];
      for (std::size_t t = 0; t < c.visits(); ++t) var += std::pow(c.feature_row(f)[t] - mean, 2);
    }
    var /= count;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
  const auto again = normalize(n, train);
  for (std::size_t i = 0; i < ds.cases.size(); ++i) {
    for (std::size_t k = 0; k < again.cases[i].records.size(); ++k) {
      CHECK(std::abs(again.cases[i].records[k] - n.cases[i].records[k]) < 1e-9);
    }
    for (std::size_t k = 0; k < again.cases[i].baseline.size(); ++k) {
      CHECK(std::abs(again.cases[i].baseline[k] - n.cases[i].baseline[k]) < 1e-9);
    }
  }
}

TEST_CASE("split_folds examples") {
  const auto ten = split_folds(10, 10, 1);
  REQUIRE(ten.size() == 10);
  for (const auto& f : ten) CHECK(f.size() == 1);

  const auto eleven = split_folds(11, 10, 1);
  std::multiset<std::size_t> sizes;
  for (const auto& f : eleven) sizes.insert(f.size());
  CHECK(sizes.count(2) == 1);
  CHECK(sizes.count(1) == 9);

  CHECK_THROWS(split_folds(5, 6, 1));
  CHECK_THROWS(split_folds(5, 1, 1));
  CHECK(split_folds(30, 4, 9) == split_folds(30, 4, 9));
}

TEST_CASE("split_folds is a partition for many (n, k, seed)") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    const std::size_t k = 2 + rng() % (n - 1);
    const auto folds = split_folds(n, k, rng());
    REQUIRE(folds.size() == k);
    std::vector<int> seen(n, 0);
    std::size_t lo = n;
    std::size_t hi = 0;
    for (const auto& f : folds) {
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
      for (auto id : f) ++seen[id];
    }
    CHECK(hi - lo <= 1);
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
  }
}

TEST_CASE("make_batches examples") {
  Dataset ds = testing::random_dataset(1, 1, 5, 2, 3);
  ds.cases.push_back(testing::random_dataset(1, 1, 7, 1, 4).cases[0]);
  const auto batches = make_batches(ds, {0, 1, 2}, 2, 0);
  REQUIRE(batches.size() == 2);
  std::multiset<std::size_t> sizes{batches[0].size(), batches[1].size()};
  CHECK(sizes == std::multiset<std::size_t>{1, 2});
  for (const auto& b : batches) {
    if (b.size() == 1) CHECK(ds.cases[b[0]].visits() == 7);
    if (b.size() == 2) {
      CHECK(ds.cases[b[0]].visits() == 5);
      CHECK(ds.cases[b[1]].visits() == 5);
    }
  }

  const auto singles = make_batches(ds, {0, 1, 2}, 1, 0);
  CHECK(singles.size() == 3);
}

TEST_CASE("make_batches preserves the id multiset and groups by length") {
  std::mt19937_64 rng(8);
  Dataset ds;
  ds.feature_names = {"x"};
  ds.baseline_names = {"b"};
  ds.baseline_binary = {false};
  for (int i = 0; i < 60; ++i) {
    auto c = testing::random_dataset(1, 1, 1 + rng() % 6, 1, rng()).cases[0];
    ds.cases.push_back(c);
  }
  for (int trial = 0; trial < 50; ++trial) {
    IdSet ids;
    const std::size_t m = 1 + rng() % 80;
    for (std::size_t i = 0; i < m; ++i) ids.push_back(rng() % ds.cases.size());
    const std::size_t bs = 1 + rng() % 10;
    const auto batches = make_batches(ds, ids, bs, rng());
    std::multiset<std::size_t> emitted;
    for (const auto& b : batches) {
      CHECK(!b.empty());
      CHECK(b.size() <= bs);
      for (auto id : b) {
        emitted.insert(id);
        CHECK(ds.cases[id].visits() == ds.cases[b[0]].visits());
      }
    }
    CHECK(emitted == std::multiset<std::size_t>(ids.begin(), ids.end()));
  }
}

TEST_CASE("holdout_split partitions") {
  IdSet ids;
  for (std::size_t i = 0; i < 100; ++i) ids.push_back(i * 3);
  const auto [kept, held] = holdout_split(ids, 0.2, 4);
  CHECK(held.size() == 20);
  std::set<std::size_t> all(kept.begin(), kept.end());
  all.insert(held.begin(), held.end());
  CHECK(all.size() == 100);
}

TEST_CASE("synthetic generator is deterministic and valid") {
  SyntheticSpec spec;
  spec.n_cases = 200;
  spec.seed = 12;
  spec.interaction = {{0, 1}};
  spec.label_noise = 0.1;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  REQUIRE(a.dataset.cases.size() == 200);
  for (std::size_t i = 0; i < a.dataset.cases.size(); ++i) {
    const auto& c = a.dataset.cases[i];
    CHECK(c.records == b.dataset.cases[i].records);
    CHECK(c.timestamps == b.dataset.cases[i].timestamps);
    CHECK(c.label == b.dataset.cases[i].label);
    CHECK_NOTHROW(validate_case(c, 4, 3));
    CHECK(c.visits() >= 6);
    CHECK(c.visits() <= 24);
  }
  spec.seed = 13;
  CHECK(generate_synthetic(spec).dataset.cases[0].records != a.dataset.cases[0].records);
}

TEST_CASE("synthetic prevalence is within 5 points of the target") {
  for (double prevalence : {0.1, 0.3, 0.5}) {
    SyntheticSpec spec;
    spec.n_cases = 1000;
    spec.prevalence = prevalence;
    spec.label_noise = 0.2;
    spec.seed = 5;
    const auto r = generate_synthetic(spec);
    double pos = 0.0;
    for (const auto& c : r.dataset.cases) pos += c.label;
    CHECK(std::abs(pos / 1000.0 - prevalence) < 0.05);
  }
}

TEST_CASE("a single planted fast feature is recovered by thresholding its latest value") {
  SyntheticSpec spec;
  spec.n_features = 2;
  spec.n_cases = 300;
  spec.decay_profile = {DecayProfile::kFast, DecayProfile::kSlow};
  spec.feature_weight = {1.0, 0.0};
  spec.seed = 3;
  const auto r = generate_synthetic(spec);
  for (const auto& c : r.dataset.cases) {
    const int predicted = latest_value(c, 0) > r.manifest.threshold ? 1 : 0;
    CHECK(predicted == c.label);
  }
}

TEST_CASE("planted terms against hand computation") {
  PatientCase c;
  c.timestamps = {0.0, 2.0, 6.0};
  c.records = {1.0, 3.0, -1.0};
  CHECK(latest_value(c, 0) == -1.0);
  // trapezoid: (1+3)/2*2 + (3-1)/2*4 = 4 + 4 = 8 over 6 hours
  CHECK(time_weighted_mean(c, 0) == doctest::Approx(8.0 / 6.0));
  PatientCase single;
  single.timestamps = {0.0};
  single.records = {2.5};
  CHECK(time_weighted_mean(single, 0) == 2.5);
}

TEST_CASE("manifest round trip") {
  SyntheticSpec spec;
  spec.n_cases = 50;
  spec.interaction = {{1, 2}};
  spec.seed = 99;
  const auto r = generate_synthetic(spec);
  const auto p = temp_path("manifest.json");
  save_manifest(r.manifest, p);
  const auto m = load_manifest(p);
  CHECK(m.spec.seed == 99);
  CHECK(m.spec.interaction == spec.interaction);
  CHECK(m.spec.decay_profile == r.manifest.spec.decay_profile);
  CHECK(m.threshold == r.manifest.threshold);
  CHECK(m.feature_names == r.manifest.feature_names);
}
