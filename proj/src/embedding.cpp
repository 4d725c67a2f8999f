#include "ctxrisk/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ctxrisk::embedding {

using numerics::axpy;
using numerics::dot;
using numerics::matvec;
using numerics::matvec_t_add;
using numerics::outer_add;
using numerics::sigmoid;

GruTrace gru_forward(std::span<const double> series, const GruWeights& w) {
  const std::size_t d = w.hidden;
  const std::size_t steps = series.size();
  if (steps == 0) throw std::invalid_argument("gru_forward: empty series");
  GruTrace tr;
  tr.hidden = d;
  tr.steps = steps;
  tr.h.assign((steps + 1) * d, 0.0);
  tr.z.assign(steps * d, 0.0);
  tr.r.assign(steps * d, 0.0);
  tr.c.assign(steps * d, 0.0);

  std::vector<double> uz(d), ur(d), uh(d), rh(d);
  for (std::size_t t = 0; t < steps; ++t) {
    const double x = series[t];
    std::span<const double> hp{tr.h.data() + t * d, d};
    double* z = tr.z.data() + t * d;
    double* r = tr.r.data() + t * d;
    double* c = tr.c.data() + t * d;
    double* h = tr.h.data() + (t + 1) * d;

    matvec(w.u_z, d, d, hp, uz);
    matvec(w.u_r, d, d, hp, ur);
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = sigmoid(w.w_z[i] * x + uz[i] + w.b_z[i]);
      r[i] = sigmoid(w.w_r[i] * x + ur[i] + w.b_r[i]);
      rh[i] = r[i] * hp[i];
    }
    matvec(w.u_h, d, d, rh, uh);
    for (std::size_t i = 0; i < d; ++i) {
      c[i] = std::tanh(w.w_h[i] * x + uh[i] + w.b_h[i]);
      h[i] = (1.0 - z[i]) * hp[i] + z[i] * c[i];
    }
  }
  return tr;
}

void gru_backward(const GruTrace& tr, std::span<const double> series, const GruWeights& w,
                  std::span<const double> dstates, GruGrads& g) {
  const std::size_t d = tr.hidden;
  std::vector<double> dh(d, 0.0);
  std::vector<double> dhp(d), da_z(d), da_r(d), da_c(d), drh(d), rh(d);

  for (std::size_t t = tr.steps; t-- > 0;) {
    for (std::size_t i = 0; i < d; ++i) dh[i] += dstates[t * d + i];
    const double x = series[t];
    std::span<const double> hp{tr.h.data() + t * d, d};
    const double* z = tr.z.data() + t * d;
    const double* r = tr.r.data() + t * d;
    const double* c = tr.c.data() + t * d;

    for (std::size_t i = 0; i < d; ++i) {
      const double dz = dh[i] * (c[i] - hp[i]);
      const double dc = dh[i] * z[i];
      dhp[i] = dh[i] * (1.0 - z[i]);
      da_c[i] = dc * (1.0 - c[i] * c[i]);
      da_z[i] = dz * z[i] * (1.0 - z[i]);
      rh[i] = r[i] * hp[i];
    }

    // Candidate path.
    for (std::size_t i = 0; i < d; ++i) {
      g.w_h[i] += da_c[i] * x;
      g.b_h[i] += da_c[i];
    }
    outer_add(g.u_h, d, d, da_c, rh);
    std::fill(drh.begin(), drh.end(), 0.0);
    matvec_t_add(w.u_h, d, d, da_c, drh);
    for (std::size_t i = 0; i < d; ++i) {
      const double dr = drh[i] * hp[i];
      dhp[i] += drh[i] * r[i];
      da_r[i] = dr * r[i] * (1.0 - r[i]);
    }

    // Gates.
    for (std::size_t i = 0; i < d; ++i) {
      g.w_z[i] += da_z[i] * x;
      g.b_z[i] += da_z[i];
      g.w_r[i] += da_r[i] * x;
      g.b_r[i] += da_r[i];
    }
    outer_add(g.u_z, d, d, da_z, hp);
    outer_add(g.u_r, d, d, da_r, hp);
    matvec_t_add(w.u_z, d, d, da_z, dhp);
    matvec_t_add(w.u_r, d, d, da_r, dhp);

    dh = dhp;
  }
}

double decay_score(double qk, double beta, double dt) {
  const double log_term = std::log(std::numbers::e + (1.0 - sigmoid(qk)) * dt);
  return std::tanh(qk / (beta * log_term));
}

TimeAttentionResult time_aware_attention(std::span<const double> hidden_states,
                                         std::span<const double> timestamps,
                                         const TimeAttentionWeights& w, bool use_elapsed_time) {
  const std::size_t d = w.hidden;
  const std::size_t steps = timestamps.size();
  if (steps == 0 || hidden_states.size() != steps * d) {
    throw std::invalid_argument("time_aware_attention: shape mismatch");
  }
  if (!(w.beta > 0.0)) throw std::invalid_argument("time_aware_attention: beta must be positive");

  TimeAttentionResult res;
  res.query.assign(d, 0.0);
  res.keys.assign(steps * d, 0.0);
  res.scores.resize(steps);
  res.deltas.resize(steps);
  res.log_terms.resize(steps);
  res.zetas.resize(steps);

  matvec(w.w_q, d, d, hidden_states.subspan((steps - 1) * d, d), res.query);
  const double last = timestamps[steps - 1];
  for (std::size_t t = 0; t < steps; ++t) {
    std::span<double> key{res.keys.data() + t * d, d};
    matvec(w.w_k, d, d, hidden_states.subspan(t * d, d), key);
    const double s = dot(res.query, key);
    const double dt = use_elapsed_time ? last - timestamps[t] : 0.0;
    const double log_term = std::log(std::numbers::e + (1.0 - sigmoid(s)) * dt);
    res.scores[t] = s;
    res.deltas[t] = dt;
    res.log_terms[t] = log_term;
    res.zetas[t] = std::tanh(s / (w.beta * log_term));
  }
  res.alphas = numerics::softmax(res.zetas);
  res.context.assign(d, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    axpy(res.alphas[t], hidden_states.subspan(t * d, d), res.context);
  }
  return res;
}

std::vector<double> time_aware_attention_backward(const TimeAttentionResult& res,
                                                  std::span<const double> hidden_states,
                                                  const TimeAttentionWeights& w,
                                                  std::span<const double> dcontext,
                                                  TimeAttentionGrads& g) {
  const std::size_t d = w.hidden;
  const std::size_t steps = res.alphas.size();
  std::vector<double> dhidden(steps * d, 0.0);

  std::vector<double> dalpha(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    auto h = hidden_states.subspan(t * d, d);
    dalpha[t] = dot(dcontext, h);
    axpy(res.alphas[t], dcontext, std::span<double>(dhidden.data() + t * d, d));
  }
  const auto dzeta = numerics::softmax_backward(res.alphas, dalpha);

  std::vector<double> dquery(d, 0.0);
  std::vector<double> dkey(d);
  for (std::size_t t = 0; t < steps; ++t) {
    const double zeta = res.zetas[t];
    const double s = res.scores[t];
    const double lt = res.log_terms[t];
    const double ratio = s / (w.beta * lt);
    const double dv = dzeta[t] * (1.0 - zeta * zeta);
    // ratio = s / (beta * L(s)), L(s) = ln(e + (1 - sigmoid(s)) dt)
    const double sig = sigmoid(s);
    const double arg = std::numbers::e + (1.0 - sig) * res.deltas[t];
    const double dl_ds = -sig * (1.0 - sig) * res.deltas[t] / arg;
    const double dratio_ds = 1.0 / (w.beta * lt) - s / (w.beta * lt * lt) * dl_ds;
    const double ds = dv * dratio_ds;
    g.beta += dv * (-ratio / w.beta);

    std::span<const double> key{res.keys.data() + t * d, d};
    axpy(ds, key, dquery);
    for (std::size_t i = 0; i < d; ++i) dkey[i] = ds * res.query[i];
    auto h = hidden_states.subspan(t * d, d);
    outer_add(g.w_k, d, d, dkey, h);
    matvec_t_add(w.w_k, d, d, dkey, std::span<double>(dhidden.data() + t * d, d));
  }
  auto h_last = hidden_states.subspan((steps - 1) * d, d);
  outer_add(g.w_q, d, d, dquery, h_last);
  matvec_t_add(w.w_q, d, d, dquery, std::span<double>(dhidden.data() + (steps - 1) * d, d));
  return dhidden;
}

std::vector<double> embed_baseline(std::span<const double> baseline, std::span<const double> w,
                                   std::size_t hidden) {
  if (w.size() != hidden * baseline.size()) {
    throw std::invalid_argument("embed_baseline: baseline length does not match embedding");
  }
  std::vector<double> out(hidden);
  matvec(w, hidden, baseline.size(), baseline, out);
  return out;
}

void embed_baseline_backward(std::span<const double> baseline, std::span<const double> dout,
                             std::span<double> dw) {
  outer_add(dw, dout.size(), baseline.size(), dout, baseline);
}

namespace {

std::span<const double> slice(std::span<const double> s, std::size_t index, std::size_t len) {
  return s.subspan(index * len, len);
}
std::span<double> slice(std::vector<double>& s, std::size_t index, std::size_t len) {
  return std::span<double>(s).subspan(index * len, len);
}

}  // namespace

GruWeights gru_weights(const ModelParams& p, std::size_t n) {
  const std::size_t d = p.config.dims.hidden;
  const auto& s = p.store;
  const auto& ids = p.ids;
  return GruWeights{slice(s.value(ids.gru_wz), n, d), slice(s.value(ids.gru_uz), n, d * d),
                    slice(s.value(ids.gru_bz), n, d), slice(s.value(ids.gru_wr), n, d),
                    slice(s.value(ids.gru_ur), n, d * d), slice(s.value(ids.gru_br), n, d),
                    slice(s.value(ids.gru_wh), n, d), slice(s.value(ids.gru_uh), n, d * d),
                    slice(s.value(ids.gru_bh), n, d), d};
}

GruGrads gru_grads(const ModelParams& p, numerics::GradTable& t, std::size_t n) {
  const std::size_t d = p.config.dims.hidden;
  const auto& ids = p.ids;
  return GruGrads{slice(t[ids.gru_wz], n, d), slice(t[ids.gru_uz], n, d * d),
                  slice(t[ids.gru_bz], n, d), slice(t[ids.gru_wr], n, d),
                  slice(t[ids.gru_ur], n, d * d), slice(t[ids.gru_br], n, d),
                  slice(t[ids.gru_wh], n, d), slice(t[ids.gru_uh], n, d * d),
                  slice(t[ids.gru_bh], n, d)};
}

TimeAttentionWeights time_attention_weights(const ModelParams& p, std::size_t n) {
  const std::size_t d = p.config.dims.hidden;
  const auto& s = p.store;
  return TimeAttentionWeights{slice(s.value(p.ids.emb_wq), n, d * d),
                              slice(s.value(p.ids.emb_wk), n, d * d),
                              decay_rate(s.value(p.ids.beta_raw)[n]), d};
}

FeatureMatrix build_feature_matrix(const data::PatientCase& c, const ModelParams& p,
                                   EmbeddingTrace* trace) {
  const auto& dims = p.config.dims;
  const std::size_t n_feat = dims.n_features;
  const std::size_t d = dims.hidden;
  if (c.records.size() != n_feat * c.visits() || c.baseline.size() != dims.n_baseline) {
    throw std::invalid_argument("case '" + c.id + "' does not match the model schema");
  }
  FeatureMatrix F(n_feat + 1, d);
  if (trace != nullptr) {
    trace->gru.clear();
    trace->attention.clear();
  }
  const std::span<const double> series_all(c.records);
  for (std::size_t n = 0; n < n_feat; ++n) {
    auto series = series_all.subspan(n * c.visits(), c.visits());
    GruTrace gt = gru_forward(series, gru_weights(p, n));
    TimeAttentionResult at = time_aware_attention(gt.states(), c.timestamps,
                                                  time_attention_weights(p, n),
                                                  p.config.time_aware);
    std::copy(at.context.begin(), at.context.end(), F.row(n).begin());
    if (trace != nullptr) {
      trace->gru.push_back(std::move(gt));
      trace->attention.push_back(std::move(at));
    }
  }
  const auto fb = embed_baseline(c.baseline, p.store.value(p.ids.base_emb), d);
  std::copy(fb.begin(), fb.end(), F.row(n_feat).begin());
  return F;
}

void build_feature_matrix_backward(const data::PatientCase& c, const ModelParams& p,
                                   const EmbeddingTrace& trace, const FeatureMatrix& dF,
                                   numerics::GradTable& table) {
  const auto& dims = p.config.dims;
  const std::size_t d = dims.hidden;
  const std::span<const double> series_all(c.records);
  const auto raw = p.store.value(p.ids.beta_raw);
  for (std::size_t n = 0; n < dims.n_features; ++n) {
    const auto& gt = trace.gru[n];
    const auto tw = time_attention_weights(p, n);
    TimeAttentionGrads tg{slice(table[p.ids.emb_wq], n, d * d),
                          slice(table[p.ids.emb_wk], n, d * d), 0.0};
    const auto dstates = time_aware_attention_backward(trace.attention[n], gt.states(), tw,
                                                       dF.row(n), tg);
    // beta = softplus(raw) + floor
    table[p.ids.beta_raw][n] += tg.beta * sigmoid(raw[n]);
    auto gg = gru_grads(p, table, n);
    gru_backward(gt, series_all.subspan(n * c.visits(), c.visits()), gru_weights(p, n), dstates,
                 gg);
  }
  embed_baseline_backward(c.baseline, dF.row(dims.n_features), table[p.ids.base_emb]);
}

}  // namespace ctxrisk::embedding
