#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Workspace {
 public:
  Workspace() {
    dir_ = fs::temp_directory_path() / ("ctxrisk_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }

  const fs::path& dir() const { return dir_; }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

  Run run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt";
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = std::string(CTXRISK_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

 private:
  fs::path dir_;
  static inline int counter_ = 0;
};

const std::string kSmallTrain = " --hidden 8 --heads 2 --max-epochs 3 --patience 2";

}  // namespace

TEST_CASE("generate, train, eval and inspect chain") {
  Workspace ws;
  const auto gen = ws / "gen";
  auto r = ws.run("generate --cases 120 --features 4 --baseline 3 --interaction 0:1 --seed 3 --out " + gen.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("cases=120") == 0);
  CHECK(fs::exists(gen / "dataset.jsonl"));
  CHECK(fs::exists(gen / "manifest.json"));
  CHECK(json::parse(slurp(gen / "resolved_config.json")).at("seed") == 3);

  const auto data = (gen / "dataset.jsonl").string();
  const auto tr = ws / "train";
  r = ws.run("train --data " + data + kSmallTrain + " --out " + tr.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("best_epoch=") != std::string::npos);
  const auto split = json::parse(slurp(tr / "split.json"));
  CHECK(split.at("train").size() + split.at("val").size() + split.at("test").size() == 120);
  std::ifstream log(tr / "train_log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  CHECK(lines == 3);

  const auto model = (tr / "model.json").string();
  const auto ev = ws / "eval";
  r = ws.run("eval --data " + data + " --model " + model + " --split " + (tr / "split.json").string() +
             " --bootstrap 20 --out " + ev.string());
  REQUIRE(r.code == 0);
  const auto report = json::parse(slurp(ev / "eval_report.json"));
  CHECK(report.at("cases") == split.at("test").size());
  CHECK(report.at("metrics").at("auroc").at("replicates").size() == 20);
  CHECK(r.out.find("AUROC") != std::string::npos);

  const auto in = ws / "inspect";
  r = ws.run("inspect --data " + data + " --model " + model + " --filter flag_1=1 --final-attention true --out " +
             in.string());
  REQUIRE(r.code == 0);
  const auto decay = slurp(in / "decay_rates.csv");
  CHECK(decay.rfind("feature,decay_rate\nfeature_0,", 0) == 0);
  const auto heat = slurp(in / "attention_head1.csv");
  CHECK(heat.rfind("query,feature_0,feature_1,feature_2,feature_3,baseline\n", 0) == 0);
  CHECK(heat.find("\nbaseline,") != std::string::npos);
  CHECK(fs::exists(in / "final_attention.csv"));
  CHECK_FALSE(fs::exists(in / "attention_head2.csv"));
}

TEST_CASE("cv writes a report and out-of-fold scores deterministically") {
  Workspace ws;
  REQUIRE(ws.run("generate --cases 60 --seed 4 --out " + ws.dir().string()).code == 0);
  const auto data = (ws / "dataset.jsonl").string();
  const std::string args = "cv --data " + data + kSmallTrain + " --folds 3 --bootstrap 10 --seed 9 --out ";
  REQUIRE(ws.run(args + (ws / "a").string()).code == 0);
  REQUIRE(ws.run(args + (ws / "b").string()).code == 0);
  CHECK(slurp(ws / "a" / "cv_report.json") == slurp(ws / "b" / "cv_report.json"));
  CHECK(slurp(ws / "a" / "cv_scores.csv") == slurp(ws / "b" / "cv_scores.csv"));
  const auto report = json::parse(slurp(ws / "a" / "cv_report.json"));
  CHECK(report.at("fold_report").at("auroc").at("replicates").size() == 3);
  CHECK(slurp(ws / "a" / "cv_scores.csv").rfind("id,label,score\n", 0) == 0);
}

TEST_CASE("config file values are overridden by flags") {
  Workspace ws;
  std::ofstream(ws / "cfg.json") << R"({"cases": 30, "features": 3, "seed": 11, "lr": 0.5})";
  const auto r = ws.run("generate --config " + (ws / "cfg.json").string() + " --features 2 --out " + ws.dir().string());
  REQUIRE(r.code == 0);
  const auto resolved = json::parse(slurp(ws / "resolved_config.json"));
  CHECK(resolved.at("cases") == 30);
  CHECK(resolved.at("features") == 2);
  CHECK(resolved.at("seed") == 11);
  CHECK_FALSE(resolved.contains("lr"));
}

TEST_CASE("failures exit nonzero with one JSON error line") {
  Workspace ws;
  auto expect_error = [&](const std::string& args, int code) {
    const auto r = ws.run(args);
    CHECK(r.code == code);
    REQUIRE_FALSE(r.err.empty());
    CHECK(r.err.find('\n') == r.err.size() - 1);
    const auto j = json::parse(r.err);
    CHECK(j.contains("error"));
    return j;
  };
  expect_error("", 2);
  expect_error("train --lr fast", 2);
  expect_error("train", 2);
  expect_error("generate --cases 0", 2);
  expect_error("eval --data missing.jsonl --model missing.json", 1);

  std::ofstream(ws / "bad.json") << R"({"hiden": 8})";
  auto j = expect_error("train --config " + (ws / "bad.json").string(), 2);
  CHECK(j.at("command") == "train");
  CHECK(j.at("error").get<std::string>().find("hiden") != std::string::npos);

  REQUIRE(ws.run("generate --cases 40 --features 3 --out " + ws.dir().string()).code == 0);
  const auto data = (ws / "dataset.jsonl").string();
  REQUIRE(ws.run("train --data " + data + kSmallTrain + " --out " + (ws / "m").string()).code == 0);
  const auto model = (ws / "m" / "model.json").string();
  const std::string quiet = " --out " + (ws / "none").string();
  expect_error("inspect --data " + data + " --model " + model + " --filter flag_1=5" + quiet, 1);
  expect_error("inspect --data " + data + " --model " + model + " --filter nothing=1" + quiet, 2);
  // A rejected selection leaves no partial output behind.
  CHECK_FALSE(fs::exists(ws / "none"));

  REQUIRE(ws.run("generate --cases 40 --features 2 --out " + (ws / "other").string()).code == 0);
  j = expect_error("eval --data " + (ws / "other" / "dataset.jsonl").string() + " --model " + model + quiet, 1);
  CHECK(j.at("error").get<std::string>().find("feature mismatch") != std::string::npos);
}

TEST_CASE("help exits cleanly") {
  Workspace ws;
  const auto r = ws.run("train --help");
  CHECK(r.code == 0);
  CHECK(r.out.find("--lambda-decorr") != std::string::npos);
}
