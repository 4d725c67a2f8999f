#include "ctxrisk/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ctxrisk::head {

using numerics::axpy;
using numerics::dot;
using numerics::matvec;
using numerics::matvec_t_add;
using numerics::outer_add;

HeadWeights head_weights(const ModelParams& p) {
  const auto& s = p.store;
  return HeadWeights{s.value(p.ids.fin_wbase), s.value(p.ids.fin_wkey), s.value(p.ids.fin_w),
                     s.value(p.ids.fin_b)[0], p.config.dims.hidden, p.key_count()};
}

HeadGrads head_grads(const ModelParams& p, numerics::GradTable& t) {
  return HeadGrads{t[p.ids.fin_wbase], t[p.ids.fin_wkey], t[p.ids.fin_w], t[p.ids.fin_b]};
}

FinalAttention final_attention(const FeatureMatrix& Fs, const HeadWeights& w) {
  const std::size_t d = w.hidden;
  const std::size_t P = Fs.rows;
  if (P == 0 || Fs.dim != d) throw std::invalid_argument("final_attention: shape mismatch");
  if (w.keys != 1 && w.keys != P) throw std::invalid_argument("final_attention: key count mismatch");
  FinalAttention res;
  res.query.assign(d, 0.0);
  res.keys.assign(P * d, 0.0);
  res.zetas.resize(P);
  matvec(w.w_base, d, d, Fs.row(P - 1), res.query);
  for (std::size_t i = 0; i < P; ++i) {
    std::span<double> key(res.keys.data() + i * d, d);
    matvec(w.key_matrix(i), d, d, Fs.row(i), key);
    res.zetas[i] = std::tanh(dot(res.query, key));
  }
  res.alphas = numerics::softmax(res.zetas);
  res.summary.assign(d, 0.0);
  for (std::size_t i = 0; i < P; ++i) axpy(res.alphas[i], Fs.row(i), res.summary);
  return res;
}

FeatureMatrix final_attention_backward(const FinalAttention& res, const FeatureMatrix& Fs,
                                       const HeadWeights& w, std::span<const double> dsummary,
                                       HeadGrads& g) {
  const std::size_t d = w.hidden;
  const std::size_t P = Fs.rows;
  FeatureMatrix dFs(P, d);
  std::vector<double> dalpha(P);
  for (std::size_t i = 0; i < P; ++i) {
    dalpha[i] = dot(dsummary, Fs.row(i));
    axpy(res.alphas[i], dsummary, dFs.row(i));
  }
  const auto dzeta = numerics::softmax_backward(res.alphas, dalpha);
  std::vector<double> dquery(d, 0.0);
  std::vector<double> dkey(d);
  for (std::size_t i = 0; i < P; ++i) {
    const double de = dzeta[i] * (1.0 - res.zetas[i] * res.zetas[i]);
    std::span<const double> key(res.keys.data() + i * d, d);
    axpy(de, key, dquery);
    for (std::size_t c = 0; c < d; ++c) dkey[c] = de * res.query[c];
    const std::size_t k = w.keys == 1 ? 0 : i;
    outer_add(g.w_key.subspan(k * d * d, d * d), d, d, dkey, Fs.row(i));
    matvec_t_add(w.key_matrix(i), d, d, dkey, dFs.row(i));
  }
  outer_add(g.w_base, d, d, dquery, Fs.row(P - 1));
  matvec_t_add(w.w_base, d, d, dquery, dFs.row(P - 1));
  return dFs;
}

Prediction predict(std::span<const double> summary, const HeadWeights& w) {
  Prediction p;
  p.logit = dot(w.w_out, summary) + w.b_out;
  const double y = numerics::sigmoid(p.logit);
  p.y_hat = std::clamp(y, kProbClamp, 1.0 - kProbClamp);
  p.clamped = p.y_hat != y;
  return p;
}

std::vector<double> predict_backward(std::span<const double> summary, const HeadWeights& w,
                                     double dlogit, HeadGrads& g) {
  axpy(dlogit, summary, g.w_out);
  g.b_out[0] += dlogit;
  std::vector<double> ds(w.w_out.begin(), w.w_out.end());
  for (double& v : ds) v *= dlogit;
  return ds;
}

double cross_entropy(double y_hat, int label) {
  return label == 1 ? -std::log(y_hat) : -std::log(1.0 - y_hat);
}

double cross_entropy_dlogit(const Prediction& pred, int label) {
  if (pred.clamped) return 0.0;
  return pred.y_hat - static_cast<double>(label);
}

double total_loss(std::span<const double> y_hats, std::span<const int> labels, double decorr,
                  double lambda) {
  if (y_hats.empty() || y_hats.size() != labels.size()) {
    throw std::invalid_argument("total_loss: batch must be non-empty and aligned");
  }
  double ce = 0.0;
  for (std::size_t b = 0; b < y_hats.size(); ++b) ce += cross_entropy(y_hats[b], labels[b]);
  return ce / static_cast<double>(y_hats.size()) + lambda * decorr;
}

}  // namespace ctxrisk::head
