#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxrisk/data.hpp"
#include "ctxrisk/params.hpp"

namespace ctxrisk::embedding {

/// Row-major stack of d-vectors: f_1..f_N then f_base.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t d) : rows(r), dim(d), values(r * d, 0.0) {}

  std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

// ---------------------------------------------------------------------------
// GRU over a scalar series.
//
//   z = sigmoid(w_z x + U_z h + b_z)
//   r = sigmoid(w_r x + U_r h + b_r)
//   c = tanh(w_h x + U_h (r * h) + b_h)
//   h' = (1 - z) * h + z * c

struct GruWeights {
  std::span<const double> w_z, u_z, b_z;
  std::span<const double> w_r, u_r, b_r;
  std::span<const double> w_h, u_h, b_h;
  std::size_t hidden = 0;
};

struct GruGrads {
  std::span<double> w_z, u_z, b_z;
  std::span<double> w_r, u_r, b_r;
  std::span<double> w_h, u_h, b_h;
};

struct GruTrace {
  std::size_t hidden = 0;
  std::size_t steps = 0;
  std::vector<double> h;  // (T+1) x d, h[0] is the zero initial state
  std::vector<double> z, r, c;  // T x d

  /// Hidden state after step t (0-based), i.e. h_{t+1} in 1-based notation.
  std::span<const double> state(std::size_t t) const { return {h.data() + (t + 1) * hidden, hidden}; }
  /// All T states, contiguous.
  std::span<const double> states() const { return {h.data() + hidden, steps * hidden}; }
};

GruTrace gru_forward(std::span<const double> series, const GruWeights& w);

/// dstates is T x d (gradient w.r.t. every emitted state).
void gru_backward(const GruTrace& trace, std::span<const double> series, const GruWeights& w,
                  std::span<const double> dstates, GruGrads& g);

// ---------------------------------------------------------------------------
// Time-aware attention over one feature's hidden states.

/// Score of one position: tanh(qk / (beta * ln(e + (1 - sigmoid(qk)) * dt))).
double decay_score(double qk, double beta, double dt);

struct TimeAttentionWeights {
  std::span<const double> w_q;  // d x d
  std::span<const double> w_k;  // d x d
  double beta = 1.0;
  std::size_t hidden = 0;
};

struct TimeAttentionResult {
  std::vector<double> context;  // f_n
  std::vector<double> alphas;   // T
  // Cached for the backward pass.
  std::vector<double> query;    // d
  std::vector<double> keys;     // T x d
  std::vector<double> scores;   // q . k_t
  std::vector<double> deltas;   // elapsed time used
  std::vector<double> log_terms;
  std::vector<double> zetas;
};

/// When use_elapsed_time is false every gap is treated as zero.
TimeAttentionResult time_aware_attention(std::span<const double> hidden_states,
                                         std::span<const double> timestamps,
                                         const TimeAttentionWeights& w,
                                         bool use_elapsed_time = true);

struct TimeAttentionGrads {
  std::span<double> w_q;
  std::span<double> w_k;
  double beta = 0.0;  // d loss / d beta (not raw)
};

/// Returns the gradient w.r.t. the T x d hidden states.
std::vector<double> time_aware_attention_backward(const TimeAttentionResult& res,
                                                  std::span<const double> hidden_states,
                                                  const TimeAttentionWeights& w,
                                                  std::span<const double> dcontext,
                                                  TimeAttentionGrads& g);

// ---------------------------------------------------------------------------

/// f_base = W base (no bias). W is d x S.
std::vector<double> embed_baseline(std::span<const double> baseline, std::span<const double> w,
                                   std::size_t hidden);
void embed_baseline_backward(std::span<const double> baseline, std::span<const double> dout,
                             std::span<double> dw);

// ---------------------------------------------------------------------------
// Whole-case embedding against a ModelParams.

GruWeights gru_weights(const ModelParams& p, std::size_t feature);
GruGrads gru_grads(const ModelParams& p, numerics::GradTable& table, std::size_t feature);
TimeAttentionWeights time_attention_weights(const ModelParams& p, std::size_t feature);

struct EmbeddingTrace {
  std::vector<GruTrace> gru;
  std::vector<TimeAttentionResult> attention;
};

FeatureMatrix build_feature_matrix(const data::PatientCase& c, const ModelParams& p,
                                   EmbeddingTrace* trace = nullptr);

/// Accumulates parameter gradients for dF into table.
void build_feature_matrix_backward(const data::PatientCase& c, const ModelParams& p,
                                   const EmbeddingTrace& trace, const FeatureMatrix& dF,
                                   numerics::GradTable& table);

}  // namespace ctxrisk::embedding
