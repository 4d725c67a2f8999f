#pragma once

#include <span>
#include <vector>

#include "ctxrisk/context.hpp"
#include "ctxrisk/data.hpp"
#include "ctxrisk/embedding.hpp"
#include "ctxrisk/head.hpp"
#include "ctxrisk/params.hpp"

namespace ctxrisk::model {

/// Everything the forward pass of one patient produces.
struct CaseForward {
  embedding::FeatureMatrix features;
  embedding::EmbeddingTrace embedding;
  context::EncodeResult encoded;
  head::FinalAttention final;
  head::Prediction prediction;
};

CaseForward forward_case(const data::PatientCase& c, const ModelParams& p);

/// du_extra: gradient w.r.t. the concatenated head activations (P x d), may
/// be empty.
void backward_case(const data::PatientCase& c, const ModelParams& p, const CaseForward& fwd,
                   double dlogit, std::span<const double> du_extra, numerics::GradTable& table);

enum class Exec {
  kSerial,    // reference path: one thread, one gradient table
  kParallel,  // OpenMP over cases, per-case tables reduced in case order
};

struct BatchLoss {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double decorrelation = 0.0;
  std::vector<double> y_hats;
};

/// Mean CE over the batch plus lambda times the position-averaged
/// cross-head decorrelation. Gradients are added to p.store (not zeroed).
BatchLoss batch_loss_and_grad(ModelParams& p, const data::Dataset& ds, const data::IdSet& batch,
                              double lambda, Exec exec = Exec::kParallel);

/// Forward-only version of batch_loss_and_grad.
BatchLoss batch_loss(const ModelParams& p, const data::Dataset& ds, const data::IdSet& batch,
                     double lambda, Exec exec = Exec::kParallel);

std::vector<double> predict_scores(const ModelParams& p, const data::Dataset& ds,
                                   const data::IdSet& ids, Exec exec = Exec::kParallel);

/// Interpretability capture for one patient.
struct AttentionTrace {
  std::vector<std::vector<double>> time_alphas;  // per feature, length T
  std::vector<double> self_attention;            // heads x P x P
  std::vector<double> final_alphas;              // P, baseline last
  double y_hat = 0.0;
};

AttentionTrace trace_case(const data::PatientCase& c, const ModelParams& p);

std::vector<double> decay_rates(const ModelParams& p);

}  // namespace ctxrisk::model
