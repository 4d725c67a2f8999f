#pragma once

#include <cstddef>
#include <cstdint>

#include "ctxrisk/numerics.hpp"

namespace ctxrisk {

struct ModelDims {
  std::size_t n_features = 0;
  std::size_t n_baseline = 0;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn = 64;

  std::size_t head_dim() const { return hidden / heads; }
  std::size_t positions() const { return n_features + 1; }
};

struct ModelConfig {
  ModelDims dims;
  /// false forces every elapsed-time gap to zero inside the time-aware
  /// attention (the time-unaware comparison variant).
  bool time_aware = true;
  /// Head key projection: one shared matrix, or one per F* row.
  bool per_position_keys = false;
};

/// Floor added to softplus(beta_raw) so the decay rate stays positive.
constexpr double kBetaFloor = 0.01;

double decay_rate(double beta_raw);

/// Entry ids of every learnable tensor. Per-feature tensors are stacked
/// along a leading feature axis.
struct ParamIds {
  // GRU per feature: input weights [N,d], recurrent [N,d,d], biases [N,d].
  numerics::ParamId gru_wz, gru_uz, gru_bz;
  numerics::ParamId gru_wr, gru_ur, gru_br;
  numerics::ParamId gru_wh, gru_uh, gru_bh;
  // Time-aware attention per feature: [N,d,d] projections, [N] raw decay.
  numerics::ParamId emb_wq, emb_wk, beta_raw;
  // Baseline embedding [d,S].
  numerics::ParamId base_emb;
  // Encoder: per-head [M,dk,d] projections, output [d,M*dk], FFN, norms.
  numerics::ParamId enc_wq, enc_wk, enc_wv, enc_wo;
  numerics::ParamId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  numerics::ParamId ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  // Head: baseline query [d,d], key [K,d,d], output [d], bias [1].
  numerics::ParamId fin_wbase, fin_wkey, fin_w, fin_b;
};

/// Every learnable weight plus the configuration that shaped it.
struct ModelParams {
  ModelConfig config;
  numerics::ParamStore store;
  ParamIds ids{};

  std::size_t key_count() const {
    return config.per_position_keys ? config.dims.positions() : 1;
  }
};

/// Allocates every tensor with the configured shapes (all zero).
ModelParams allocate_model(const ModelConfig& config);

/// Weights uniform in +-1/sqrt(fan_in), biases zero, norm gains one,
/// decay rates one.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

void validate_config(const ModelConfig& config);

}  // namespace ctxrisk
