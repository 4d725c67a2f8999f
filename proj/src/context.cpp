#include "ctxrisk/context.hpp"

#include <cmath>
#include <stdexcept>

namespace ctxrisk::context {

using numerics::axpy;
using numerics::dot;
using numerics::matvec;
using numerics::matvec_t_add;
using numerics::outer_add;

EncoderWeights encoder_weights(const ModelParams& p) {
  const auto& s = p.store;
  const auto& ids = p.ids;
  const auto& dm = p.config.dims;
  return EncoderWeights{s.value(ids.enc_wq),   s.value(ids.enc_wk),   s.value(ids.enc_wv),
                        s.value(ids.enc_wo),   s.value(ids.ffn_w1),   s.value(ids.ffn_b1),
                        s.value(ids.ffn_w2),   s.value(ids.ffn_b2),   s.value(ids.ln1_gain),
                        s.value(ids.ln1_bias), s.value(ids.ln2_gain), s.value(ids.ln2_bias),
                        dm.hidden,             dm.heads,              dm.ffn};
}

EncoderGrads encoder_grads(const ModelParams& p, numerics::GradTable& t) {
  const auto& ids = p.ids;
  return EncoderGrads{t[ids.enc_wq],   t[ids.enc_wk],   t[ids.enc_wv],    t[ids.enc_wo],
                      t[ids.ffn_w1],   t[ids.ffn_b1],   t[ids.ffn_w2],    t[ids.ffn_b2],
                      t[ids.ln1_gain], t[ids.ln1_bias], t[ids.ln2_gain], t[ids.ln2_bias]};
}

AttentionResult multi_head_attention(const FeatureMatrix& F, const EncoderWeights& w) {
  const std::size_t d = w.hidden;
  const std::size_t heads = w.heads;
  const std::size_t dk = w.head_dim();
  const std::size_t P = F.rows;
  if (F.dim != d) throw std::invalid_argument("multi_head_attention: width mismatch");

  AttentionResult res;
  res.positions = P;
  res.heads = heads;
  res.u = FeatureMatrix(P, heads * dk);
  res.projected = FeatureMatrix(P, d);
  res.attn.assign(heads * P * P, 0.0);
  res.q.assign(heads * P * dk, 0.0);
  res.k.assign(heads * P * dk, 0.0);
  res.v.assign(heads * P * dk, 0.0);

  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> scores(P);
  for (std::size_t m = 0; m < heads; ++m) {
    auto wq = w.w_q.subspan(m * dk * d, dk * d);
    auto wk = w.w_k.subspan(m * dk * d, dk * d);
    auto wv = w.w_v.subspan(m * dk * d, dk * d);
    for (std::size_t i = 0; i < P; ++i) {
      matvec(wq, dk, d, F.row(i), std::span<double>(res.q).subspan((m * P + i) * dk, dk));
      matvec(wk, dk, d, F.row(i), std::span<double>(res.k).subspan((m * P + i) * dk, dk));
      matvec(wv, dk, d, F.row(i), std::span<double>(res.v).subspan((m * P + i) * dk, dk));
    }
    for (std::size_t i = 0; i < P; ++i) {
      std::span<const double> qi(res.q.data() + (m * P + i) * dk, dk);
      for (std::size_t j = 0; j < P; ++j) {
        std::span<const double> kj(res.k.data() + (m * P + j) * dk, dk);
        scores[j] = dot(qi, kj) * scale;
      }
      const auto alpha = numerics::softmax(scores);
      auto head_out = res.u.row(i).subspan(m * dk, dk);
      for (std::size_t j = 0; j < P; ++j) {
        res.attn[(m * P + i) * P + j] = alpha[j];
        axpy(alpha[j], std::span<const double>(res.v.data() + (m * P + j) * dk, dk), head_out);
      }
    }
  }
  for (std::size_t i = 0; i < P; ++i) matvec(w.w_o, d, heads * dk, res.u.row(i), res.projected.row(i));
  return res;
}

FeatureMatrix multi_head_attention_backward(const AttentionResult& res, const FeatureMatrix& F,
                                            const EncoderWeights& w,
                                            std::span<const double> dprojected,
                                            std::span<const double> du_extra, EncoderGrads& g) {
  const std::size_t d = w.hidden;
  const std::size_t heads = w.heads;
  const std::size_t dk = w.head_dim();
  const std::size_t P = res.positions;
  const std::size_t width = heads * dk;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  FeatureMatrix du(P, width);
  for (std::size_t i = 0; i < P; ++i) {
    auto dp = dprojected.subspan(i * d, d);
    outer_add(g.w_o, d, width, dp, res.u.row(i));
    matvec_t_add(w.w_o, d, width, dp, du.row(i));
    if (!du_extra.empty()) axpy(1.0, du_extra.subspan(i * width, width), du.row(i));
  }

  FeatureMatrix dF(P, d);
  std::vector<double> dq(P * dk), dk_(P * dk), dv(P * dk);
  std::vector<double> dalpha(P);
  for (std::size_t m = 0; m < heads; ++m) {
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk_.begin(), dk_.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    const double* q = res.q.data() + m * P * dk;
    const double* k = res.k.data() + m * P * dk;
    const double* v = res.v.data() + m * P * dk;
    for (std::size_t i = 0; i < P; ++i) {
      auto dhead = std::span<const double>(du.row(i)).subspan(m * dk, dk);
      std::span<const double> alpha(res.attn.data() + (m * P + i) * P, P);
      for (std::size_t j = 0; j < P; ++j) {
        dalpha[j] = dot(dhead, std::span<const double>(v + j * dk, dk));
        axpy(alpha[j], dhead, std::span<double>(dv.data() + j * dk, dk));
      }
      const auto dscore = numerics::softmax_backward(alpha, dalpha);
      for (std::size_t j = 0; j < P; ++j) {
        const double s = dscore[j] * scale;
        axpy(s, std::span<const double>(k + j * dk, dk), std::span<double>(dq.data() + i * dk, dk));
        axpy(s, std::span<const double>(q + i * dk, dk), std::span<double>(dk_.data() + j * dk, dk));
      }
    }
    auto wq = w.w_q.subspan(m * dk * d, dk * d);
    auto wk = w.w_k.subspan(m * dk * d, dk * d);
    auto wv = w.w_v.subspan(m * dk * d, dk * d);
    auto gq = g.w_q.subspan(m * dk * d, dk * d);
    auto gk = g.w_k.subspan(m * dk * d, dk * d);
    auto gv = g.w_v.subspan(m * dk * d, dk * d);
    for (std::size_t i = 0; i < P; ++i) {
      std::span<const double> dqi(dq.data() + i * dk, dk);
      std::span<const double> dki(dk_.data() + i * dk, dk);
      std::span<const double> dvi(dv.data() + i * dk, dk);
      outer_add(gq, dk, d, dqi, F.row(i));
      outer_add(gk, dk, d, dki, F.row(i));
      outer_add(gv, dk, d, dvi, F.row(i));
      matvec_t_add(wq, dk, d, dqi, dF.row(i));
      matvec_t_add(wk, dk, d, dki, dF.row(i));
      matvec_t_add(wv, dk, d, dvi, dF.row(i));
    }
  }
  return dF;
}

double decorrelation_loss(std::span<const double> u, std::size_t batch, std::size_t dim,
                          std::span<double> grad) {
  if (batch == 0) throw std::invalid_argument("decorrelation_loss: empty batch");
  if (u.size() != batch * dim) throw std::invalid_argument("decorrelation_loss: shape mismatch");
  const double inv_b = 1.0 / static_cast<double>(batch);

  // Covariance is shift invariant; measuring from the first row first makes
  // a batch-constant input centre to exact zeros.
  std::vector<double> centered(batch * dim);
  std::vector<double> mean(dim, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < dim; ++i) {
      centered[b * dim + i] = u[b * dim + i] - u[i];
      mean[i] += centered[b * dim + i];
    }
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < dim; ++i) centered[b * dim + i] -= mean[i] * inv_b;
  }
  // Off-diagonal covariances only; the diagonal cancels in the loss.
  std::vector<double> cov(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i + 1; j < dim; ++j) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) s += centered[b * dim + i] * centered[b * dim + j];
      cov[i * dim + j] = cov[j * dim + i] = s * inv_b;
    }
  }
  double loss = 0.0;
  for (double c : cov) loss += c * c;
  loss *= 0.5;

  if (!grad.empty()) {
    // d/du^b = (2/B) G (u^b - mu), G = C with zeroed diagonal.
    for (std::size_t b = 0; b < batch; ++b) {
      auto gb = grad.subspan(b * dim, dim);
      matvec(cov, dim, dim, std::span<const double>(centered).subspan(b * dim, dim), gb);
      for (double& x : gb) x *= 2.0 * inv_b;
    }
  }
  return loss;
}

std::vector<double> feed_forward(std::span<const double> x, const EncoderWeights& w,
                                 FeedForwardCache* cache) {
  const std::size_t d = w.hidden;
  std::vector<double> pre(w.ffn);
  matvec(w.w_1, w.ffn, d, x, pre);
  std::vector<double> act(w.ffn);
  for (std::size_t i = 0; i < w.ffn; ++i) {
    pre[i] += w.b_1[i];
    act[i] = pre[i] > 0.0 ? pre[i] : 0.0;
  }
  std::vector<double> out(d);
  matvec(w.w_2, d, w.ffn, act, out);
  for (std::size_t i = 0; i < d; ++i) out[i] += w.b_2[i];
  if (cache != nullptr) {
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

std::vector<double> feed_forward_backward(const FeedForwardCache& cache,
                                          std::span<const double> x, const EncoderWeights& w,
                                          std::span<const double> dy, EncoderGrads& g) {
  const std::size_t d = w.hidden;
  outer_add(g.w_2, d, w.ffn, dy, cache.act);
  axpy(1.0, dy, g.b_2);
  std::vector<double> dpre(w.ffn, 0.0);
  matvec_t_add(w.w_2, d, w.ffn, dy, dpre);
  for (std::size_t i = 0; i < w.ffn; ++i) {
    if (!(cache.pre[i] > 0.0)) dpre[i] = 0.0;
  }
  outer_add(g.w_1, w.ffn, d, dpre, x);
  axpy(1.0, dpre, g.b_1);
  std::vector<double> dx(d, 0.0);
  matvec_t_add(w.w_1, w.ffn, d, dpre, dx);
  return dx;
}

EncodeResult encode(const FeatureMatrix& F, const EncoderWeights& w) {
  const std::size_t P = F.rows;
  const std::size_t d = w.hidden;
  EncodeResult res;
  res.attention = multi_head_attention(F, w);
  res.after_norm1 = FeatureMatrix(P, d);
  res.output = FeatureMatrix(P, d);
  res.norm1.resize(P);
  res.norm2.resize(P);
  res.ffn.resize(P);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t c = 0; c < d; ++c) x[c] = F.row(i)[c] + res.attention.projected.row(i)[c];
    const auto a = numerics::layer_norm(x, w.ln1_gain, w.ln1_bias, numerics::kLayerNormEps,
                                        &res.norm1[i]);
    std::copy(a.begin(), a.end(), res.after_norm1.row(i).begin());
    const auto ff = feed_forward(a, w, &res.ffn[i]);
    for (std::size_t c = 0; c < d; ++c) x[c] = a[c] + ff[c];
    const auto out = numerics::layer_norm(x, w.ln2_gain, w.ln2_bias, numerics::kLayerNormEps,
                                          &res.norm2[i]);
    std::copy(out.begin(), out.end(), res.output.row(i).begin());
  }
  return res;
}

FeatureMatrix encode_backward(const EncodeResult& res, const FeatureMatrix& F,
                              const EncoderWeights& w, const FeatureMatrix& dout,
                              std::span<const double> du_extra, EncoderGrads& g) {
  const std::size_t P = F.rows;
  const std::size_t d = w.hidden;
  FeatureMatrix dx1(P, d);
  for (std::size_t i = 0; i < P; ++i) {
    auto dx2 = numerics::layer_norm_backward(res.norm2[i], w.ln2_gain, dout.row(i), g.ln2_gain,
                                             g.ln2_bias);
    const auto da_ff = feed_forward_backward(res.ffn[i], res.after_norm1.row(i), w, dx2, g);
    for (std::size_t c = 0; c < d; ++c) dx2[c] += da_ff[c];
    const auto d1 = numerics::layer_norm_backward(res.norm1[i], w.ln1_gain, dx2, g.ln1_gain,
                                                  g.ln1_bias);
    std::copy(d1.begin(), d1.end(), dx1.row(i).begin());
  }
  FeatureMatrix dF = multi_head_attention_backward(res.attention, F, w, dx1.values, du_extra, g);
  for (std::size_t k = 0; k < dF.values.size(); ++k) dF.values[k] += dx1.values[k];
  return dF;
}

}  // namespace ctxrisk::context
