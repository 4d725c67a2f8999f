#include "ctxrisk/model.hpp"

#include <stdexcept>

namespace ctxrisk::model {

CaseForward forward_case(const data::PatientCase& c, const ModelParams& p) {
  CaseForward f;
  f.features = embedding::build_feature_matrix(c, p, &f.embedding);
  f.encoded = context::encode(f.features, context::encoder_weights(p));
  const auto hw = head::head_weights(p);
  f.final = head::final_attention(f.encoded.output, hw);
  f.prediction = head::predict(f.final.summary, hw);
  return f;
}

void backward_case(const data::PatientCase& c, const ModelParams& p, const CaseForward& fwd,
                   double dlogit, std::span<const double> du_extra, numerics::GradTable& table) {
  const auto hw = head::head_weights(p);
  auto hg = head::head_grads(p, table);
  const auto dsummary = head::predict_backward(fwd.final.summary, hw, dlogit, hg);
  const auto dFs = head::final_attention_backward(fwd.final, fwd.encoded.output, hw, dsummary, hg);

  const auto ew = context::encoder_weights(p);
  auto eg = context::encoder_grads(p, table);
  const auto dF = context::encode_backward(fwd.encoded, fwd.features, ew, dFs, du_extra, eg);

  embedding::build_feature_matrix_backward(c, p, fwd.embedding, dF, table);
}

namespace {

std::vector<CaseForward> forward_all(const ModelParams& p, const data::Dataset& ds,
                                     const data::IdSet& batch, Exec exec) {
  std::vector<CaseForward> out(batch.size());
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t b = 0; b < n; ++b) {
      out[static_cast<std::size_t>(b)] = forward_case(ds.cases[batch[static_cast<std::size_t>(b)]], p);
    }
  } else {
    for (std::ptrdiff_t b = 0; b < n; ++b) {
      out[static_cast<std::size_t>(b)] = forward_case(ds.cases[batch[static_cast<std::size_t>(b)]], p);
    }
  }
  return out;
}

struct DecorrelationTerm {
  double loss = 0.0;      // mean over positions
  std::vector<double> du;  // batch x P x width, already scaled by lambda / P
};

DecorrelationTerm decorrelation_over_positions(const std::vector<CaseForward>& fwd,
                                               double lambda, bool want_grad) {
  DecorrelationTerm out;
  const std::size_t batch = fwd.size();
  const auto& u0 = fwd.front().encoded.attention.u;
  const std::size_t P = u0.rows;
  const std::size_t width = u0.dim;
  if (want_grad) out.du.assign(batch * P * width, 0.0);

  std::vector<double> acts(batch * width);
  std::vector<double> grad(want_grad ? batch * width : 0);
  const double scale = lambda / static_cast<double>(P);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t b = 0; b < batch; ++b) {
      auto row = fwd[b].encoded.attention.u.row(i);
      std::copy(row.begin(), row.end(), acts.begin() + static_cast<std::ptrdiff_t>(b * width));
    }
    out.loss += context::decorrelation_loss(acts, batch, width, grad);
    if (want_grad) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < width; ++k) {
          out.du[(b * P + i) * width + k] = scale * grad[b * width + k];
        }
      }
    }
  }
  out.loss /= static_cast<double>(P);
  return out;
}

BatchLoss summarize(const data::Dataset& ds, const data::IdSet& batch,
                    const std::vector<CaseForward>& fwd, double decorr, double lambda) {
  BatchLoss out;
  out.y_hats.reserve(batch.size());
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.y_hats.push_back(fwd[b].prediction.y_hat);
    labels.push_back(ds.cases[batch[b]].label);
  }
  out.decorrelation = decorr;
  out.cross_entropy = head::total_loss(out.y_hats, labels, 0.0, 0.0);
  out.loss = out.cross_entropy + lambda * decorr;
  return out;
}

}  // namespace

BatchLoss batch_loss(const ModelParams& p, const data::Dataset& ds, const data::IdSet& batch,
                     double lambda, Exec exec) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const auto fwd = forward_all(p, ds, batch, exec);
  const auto dec = decorrelation_over_positions(fwd, lambda, false);
  return summarize(ds, batch, fwd, dec.loss, lambda);
}

BatchLoss batch_loss_and_grad(ModelParams& p, const data::Dataset& ds, const data::IdSet& batch,
                              double lambda, Exec exec) {
  if (batch.empty()) throw std::invalid_argument("batch_loss_and_grad: empty batch");
  const auto fwd = forward_all(p, ds, batch, exec);
  const auto dec = decorrelation_over_positions(fwd, lambda, lambda != 0.0);
  BatchLoss out = summarize(ds, batch, fwd, dec.loss, lambda);

  const std::size_t B = batch.size();
  const std::size_t slab = dec.du.empty() ? 0 : dec.du.size() / B;
  const double inv_b = 1.0 / static_cast<double>(B);
  auto du_for = [&](std::size_t b) -> std::span<const double> {
    if (slab == 0) return {};
    return std::span<const double>(dec.du).subspan(b * slab, slab);
  };
  auto dlogit_for = [&](std::size_t b) {
    return head::cross_entropy_dlogit(fwd[b].prediction, ds.cases[batch[b]].label) * inv_b;
  };

  if (exec == Exec::kSerial) {
    auto table = p.store.zero_table();
    for (std::size_t b = 0; b < B; ++b) {
      backward_case(ds.cases[batch[b]], p, fwd[b], dlogit_for(b), du_for(b), table);
    }
    p.store.accumulate(table);
    return out;
  }

  std::vector<numerics::GradTable> tables(B);
  const ModelParams& frozen = p;
  const auto n = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t bi = 0; bi < n; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    tables[b] = frozen.store.zero_table();
    backward_case(ds.cases[batch[b]], frozen, fwd[b], dlogit_for(b), du_for(b), tables[b]);
  }
  // Reduce in case order so the result does not depend on the thread count.
  const auto entries = static_cast<std::ptrdiff_t>(p.store.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ei = 0; ei < entries; ++ei) {
    const auto e = static_cast<std::size_t>(ei);
    auto g = p.store.grad(e);
    std::vector<double> sum(g.size(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& src = tables[b][e];
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += src[k];
    }
    for (std::size_t k = 0; k < sum.size(); ++k) g[k] += sum[k];
  }
  return out;
}

std::vector<double> predict_scores(const ModelParams& p, const data::Dataset& ds,
                                   const data::IdSet& ids, Exec exec) {
  std::vector<double> scores(ids.size());
  const auto n = static_cast<std::ptrdiff_t>(ids.size());
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      scores[k] = forward_case(ds.cases[ids[k]], p).prediction.y_hat;
    }
  } else {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      scores[k] = forward_case(ds.cases[ids[k]], p).prediction.y_hat;
    }
  }
  return scores;
}

AttentionTrace trace_case(const data::PatientCase& c, const ModelParams& p) {
  const auto fwd = forward_case(c, p);
  AttentionTrace tr;
  for (const auto& a : fwd.embedding.attention) tr.time_alphas.push_back(a.alphas);
  tr.self_attention = fwd.encoded.attention.attn;
  tr.final_alphas = fwd.final.alphas;
  tr.y_hat = fwd.prediction.y_hat;
  return tr;
}

std::vector<double> decay_rates(const ModelParams& p) {
  std::vector<double> out;
  for (double raw : p.store.value(p.ids.beta_raw)) out.push_back(decay_rate(raw));
  return out;
}

}  // namespace ctxrisk::model
