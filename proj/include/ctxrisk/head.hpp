#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxrisk/embedding.hpp"
#include "ctxrisk/params.hpp"

namespace ctxrisk::head {

using embedding::FeatureMatrix;

struct HeadWeights {
  std::span<const double> w_base;  // d x d
  std::span<const double> w_key;   // keys x d x d (keys = 1 when shared)
  std::span<const double> w_out;   // d
  double b_out = 0.0;
  std::size_t hidden = 0;
  std::size_t keys = 1;

  std::span<const double> key_matrix(std::size_t row) const {
    const std::size_t k = keys == 1 ? 0 : row;
    return w_key.subspan(k * hidden * hidden, hidden * hidden);
  }
};

struct HeadGrads {
  std::span<double> w_base, w_key, w_out, b_out;
};

HeadWeights head_weights(const ModelParams& p);
HeadGrads head_grads(const ModelParams& p, numerics::GradTable& table);

struct FinalAttention {
  std::vector<double> summary;  // s
  std::vector<double> alphas;   // one per F* row, baseline last
  std::vector<double> query;
  std::vector<double> keys;     // rows x d
  std::vector<double> zetas;
};

/// Baseline-queried attention over every row of F* (the last row is f*_base).
FinalAttention final_attention(const FeatureMatrix& Fs, const HeadWeights& w);

/// Returns dF*.
FeatureMatrix final_attention_backward(const FinalAttention& res, const FeatureMatrix& Fs,
                                       const HeadWeights& w, std::span<const double> dsummary,
                                       HeadGrads& g);

constexpr double kProbClamp = 1e-7;

struct Prediction {
  double logit = 0.0;
  double y_hat = 0.5;
  bool clamped = false;
};

Prediction predict(std::span<const double> summary, const HeadWeights& w);

/// Accumulates output-layer gradients for d loss / d logit; returns dsummary.
std::vector<double> predict_backward(std::span<const double> summary, const HeadWeights& w,
                                     double dlogit, HeadGrads& g);

double cross_entropy(double y_hat, int label);

/// d CE / d logit through the clamped sigmoid (zero when clamped).
double cross_entropy_dlogit(const Prediction& pred, int label);

/// Mean cross-entropy over the batch plus lambda * decorrelation.
double total_loss(std::span<const double> y_hats, std::span<const int> labels, double decorr,
                  double lambda);

}  // namespace ctxrisk::head
