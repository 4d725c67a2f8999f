#include "ctxrisk/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace ctxrisk {

double decay_rate(double beta_raw) { return numerics::softplus(beta_raw) + kBetaFloor; }

void validate_config(const ModelConfig& config) {
  const auto& d = config.dims;
  if (d.n_features == 0) throw std::invalid_argument("model needs at least one feature");
  if (d.n_baseline == 0) throw std::invalid_argument("model needs at least one baseline dimension");
  if (d.hidden == 0 || d.heads == 0 || d.ffn == 0) {
    throw std::invalid_argument("hidden, heads and ffn must be positive");
  }
  if (d.hidden % d.heads != 0) {
    throw std::invalid_argument("hidden size must be divisible by the head count");
  }
}

ModelParams allocate_model(const ModelConfig& config) {
  validate_config(config);
  const auto& dm = config.dims;
  const std::size_t n = dm.n_features;
  const std::size_t d = dm.hidden;
  const std::size_t m = dm.heads;
  const std::size_t dk = dm.head_dim();

  ModelParams p;
  p.config = config;
  auto& s = p.store;
  auto& ids = p.ids;
  ids.gru_wz = s.add("gru.w_z", {n, d});
  ids.gru_uz = s.add("gru.u_z", {n, d, d});
  ids.gru_bz = s.add("gru.b_z", {n, d});
  ids.gru_wr = s.add("gru.w_r", {n, d});
  ids.gru_ur = s.add("gru.u_r", {n, d, d});
  ids.gru_br = s.add("gru.b_r", {n, d});
  ids.gru_wh = s.add("gru.w_h", {n, d});
  ids.gru_uh = s.add("gru.u_h", {n, d, d});
  ids.gru_bh = s.add("gru.b_h", {n, d});
  ids.emb_wq = s.add("time_attn.w_q", {n, d, d});
  ids.emb_wk = s.add("time_attn.w_k", {n, d, d});
  ids.beta_raw = s.add("time_attn.beta_raw", {n});
  ids.base_emb = s.add("baseline.w_emb", {d, dm.n_baseline});
  ids.enc_wq = s.add("encoder.w_q", {m, dk, d});
  ids.enc_wk = s.add("encoder.w_k", {m, dk, d});
  ids.enc_wv = s.add("encoder.w_v", {m, dk, d});
  ids.enc_wo = s.add("encoder.w_o", {d, m * dk});
  ids.ffn_w1 = s.add("encoder.ffn.w_1", {dm.ffn, d});
  ids.ffn_b1 = s.add("encoder.ffn.b_1", {dm.ffn});
  ids.ffn_w2 = s.add("encoder.ffn.w_2", {d, dm.ffn});
  ids.ffn_b2 = s.add("encoder.ffn.b_2", {d});
  ids.ln1_gain = s.add("encoder.norm1.gain", {d});
  ids.ln1_bias = s.add("encoder.norm1.bias", {d});
  ids.ln2_gain = s.add("encoder.norm2.gain", {d});
  ids.ln2_bias = s.add("encoder.norm2.bias", {d});
  ids.fin_wbase = s.add("head.w_base", {d, d});
  ids.fin_wkey = s.add("head.w_key", {p.key_count(), d, d});
  ids.fin_w = s.add("head.w_out", {d});
  ids.fin_b = s.add("head.b_out", {1});
  return p;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = allocate_model(config);
  const auto& dm = config.dims;
  std::mt19937_64 rng(seed);
  auto uniform = [&](numerics::ParamId id, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.store.value(id)) v = dist(rng);
  };
  const auto& ids = p.ids;
  uniform(ids.gru_wz, 1);
  uniform(ids.gru_uz, dm.hidden);
  uniform(ids.gru_wr, 1);
  uniform(ids.gru_ur, dm.hidden);
  uniform(ids.gru_wh, 1);
  uniform(ids.gru_uh, dm.hidden);
  uniform(ids.emb_wq, dm.hidden);
  uniform(ids.emb_wk, dm.hidden);
  uniform(ids.base_emb, dm.n_baseline);
  uniform(ids.enc_wq, dm.hidden);
  uniform(ids.enc_wk, dm.hidden);
  uniform(ids.enc_wv, dm.hidden);
  uniform(ids.enc_wo, dm.hidden);
  uniform(ids.ffn_w1, dm.hidden);
  uniform(ids.ffn_w2, dm.ffn);
  uniform(ids.fin_wbase, dm.hidden);
  uniform(ids.fin_wkey, dm.hidden);
  uniform(ids.fin_w, dm.hidden);

  const double raw = numerics::softplus_inverse(1.0 - kBetaFloor);
  for (double& v : p.store.value(ids.beta_raw)) v = raw;
  for (double& v : p.store.value(ids.ln1_gain)) v = 1.0;
  for (double& v : p.store.value(ids.ln2_gain)) v = 1.0;
  return p;
}

}  // namespace ctxrisk
