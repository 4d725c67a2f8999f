#include <cmath>
#include <random>

#include "ctxrisk/head.hpp"
#include "ctxrisk/numerics.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ctxrisk;
using namespace ctxrisk::head;
using testing::random_values;

namespace {

FeatureMatrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t d) {
  FeatureMatrix F(rows, d);
  F.values = random_values(rng, rows * d);
  return F;
}

oracle::Mat rows_of(const FeatureMatrix& F) {
  oracle::Mat m;
  for (std::size_t i = 0; i < F.rows; ++i) m.emplace_back(F.row(i).begin(), F.row(i).end());
  return m;
}

}  // namespace

TEST_CASE("zero baseline query gives uniform final attention") {
  std::mt19937_64 rng(1);
  auto p = testing::jittered_model(testing::tiny_config(3, 2, 4, 2, 8), 1);
  p.store.entry(p.ids.fin_wbase).value.fill(0.0);
  const auto Fs = random_matrix(rng, 4, 4);
  const auto res = final_attention(Fs, head_weights(p));
  for (double a : res.alphas) CHECK(a == doctest::Approx(0.25).epsilon(1e-15));
  for (std::size_t k = 0; k < 4; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += Fs.row(i)[k] / 4.0;
    CHECK(res.summary[k] == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("two rows with zero scores split attention evenly") {
  auto p = init_model(testing::tiny_config(1, 2, 2, 1, 4), 2);
  p.store.entry(p.ids.fin_wkey).value.fill(0.0);
  FeatureMatrix Fs(2, 2);
  Fs.values = {1.0, 2.0, 3.0, 4.0};
  const auto res = final_attention(Fs, head_weights(p));
  CHECK(res.alphas[0] == 0.5);
  CHECK(res.alphas[1] == 0.5);
}

TEST_CASE("final attention matches the formula oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t N = 1 + trial % 4;
    const std::size_t d = 2 + trial % 5;
    auto cfg = testing::tiny_config(N, 2, d, 1, 4);
    cfg.per_position_keys = trial % 2 == 1;
    const auto p = testing::jittered_model(cfg, rng(), 0.5);
    const auto w = head_weights(p);
    const auto Fs = random_matrix(rng, N + 1, d);
    const auto res = final_attention(Fs, w);
    const auto ref = oracle::final_attention(rows_of(Fs), {w.w_base.begin(), w.w_base.end()},
                                             {w.w_key.begin(), w.w_key.end()});
    double sum = 0.0;
    for (std::size_t i = 0; i <= N; ++i) {
      CHECK(std::abs(res.alphas[i] - ref.alphas[i]) < 1e-12);
      sum += res.alphas[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(res.summary[k] - ref.summary[k]) < 1e-12);
  }
}

TEST_CASE("prediction examples and clamp") {
  std::mt19937_64 rng(4);
  auto p = init_model(testing::tiny_config(2, 2, 4, 2, 8), 4);
  p.store.entry(p.ids.fin_w).value.fill(0.0);
  const auto s = random_values(rng, 4);
  CHECK(predict(s, head_weights(p)).y_hat == 0.5);

  p.store.value(p.ids.fin_b)[0] = 1e6;
  const auto hi = predict(s, head_weights(p));
  CHECK(hi.y_hat == 1.0 - kProbClamp);
  CHECK(hi.clamped);
  CHECK(cross_entropy_dlogit(hi, 0) == 0.0);
  p.store.value(p.ids.fin_b)[0] = -1e6;
  CHECK(predict(s, head_weights(p)).y_hat == kProbClamp);

  const auto q = testing::jittered_model(testing::tiny_config(2, 2, 4, 2, 8), 5);
  const auto w = head_weights(q);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_values(rng, 4);
    const double logit = oracle::inner({w.w_out.begin(), w.w_out.end()}, x) + w.b_out;
    const auto pred = predict(x, w);
    CHECK(pred.y_hat == doctest::Approx(oracle::sig(logit)).epsilon(1e-14));
    CHECK(pred.y_hat > 0.0);
    CHECK(pred.y_hat < 1.0);
  }
}

TEST_CASE("loss examples") {
  const std::vector<double> half{0.5, 0.5, 0.5};
  const std::vector<int> labels{0, 1, 1};
  CHECK(total_loss(half, labels, 0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const std::vector<double> exact{kProbClamp, 1.0 - kProbClamp, 1.0 - kProbClamp};
  const double ce = total_loss(exact, labels, 0.0, 1.0);
  CHECK(ce > 0.0);
  CHECK(ce < 2e-7);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> y_hat(5);
    std::vector<int> y(5);
    double ref = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      y_hat[i] = u(rng);
      y[i] = static_cast<int>(rng() % 2);
      ref += -(y[i] * std::log(y_hat[i]) + (1 - y[i]) * std::log(1.0 - y_hat[i])) / 5.0;
    }
    const double decorr = u(rng);
    CHECK(total_loss(y_hat, y, decorr, 0.3) == doctest::Approx(ref + 0.3 * decorr).epsilon(1e-13));
    CHECK(cross_entropy(y_hat[0], y[0]) >= 0.0);
  }
}

TEST_CASE("head backward passes grad_check") {
  for (bool per_position : {false, true}) {
    std::mt19937_64 rng(7);
    auto cfg = testing::tiny_config(3, 2, 4, 2, 8);
    cfg.per_position_keys = per_position;
    auto p = testing::jittered_model(cfg, 7);
    const auto Fs = random_matrix(rng, 4, 4);
    const int label = 1;
    numerics::LossWithGrad loss = [&](numerics::ParamStore& store) {
      store.zero_grad();
      const auto w = head_weights(p);
      const auto fa = final_attention(Fs, w);
      const auto pred = predict(fa.summary, w);
      auto table = store.zero_table();
      auto g = head_grads(p, table);
      const auto ds = predict_backward(fa.summary, w, cross_entropy_dlogit(pred, label), g);
      final_attention_backward(fa, Fs, w, ds, g);
      store.accumulate(table);
      return cross_entropy(pred.y_hat, label);
    };
    const auto r = numerics::grad_check(loss, p.store, 1e-5);
    double worst = 0.0;
    for (std::size_t e = 0; e < r.names.size(); ++e) {
      if (r.names[e].rfind("head.", 0) == 0) worst = std::max(worst, r.max_rel_error[e]);
    }
    CHECK(worst < 1e-4);
  }
}
