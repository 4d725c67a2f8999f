#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxrisk/embedding.hpp"
#include "ctxrisk/numerics.hpp"
#include "ctxrisk/params.hpp"

namespace ctxrisk::context {

using embedding::FeatureMatrix;

struct EncoderWeights {
  std::span<const double> w_q, w_k, w_v;  // heads x dk x d
  std::span<const double> w_o;            // d x (heads * dk)
  std::span<const double> w_1, b_1;       // ffn x d, ffn
  std::span<const double> w_2, b_2;       // d x ffn, d
  std::span<const double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::size_t hidden = 0;
  std::size_t heads = 1;
  std::size_t ffn = 0;

  std::size_t head_dim() const { return hidden / heads; }
};

struct EncoderGrads {
  std::span<double> w_q, w_k, w_v, w_o;
  std::span<double> w_1, b_1, w_2, b_2;
  std::span<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

EncoderWeights encoder_weights(const ModelParams& p);
EncoderGrads encoder_grads(const ModelParams& p, numerics::GradTable& table);

// ---------------------------------------------------------------------------

struct AttentionResult {
  std::size_t positions = 0;
  std::size_t heads = 0;
  FeatureMatrix u;          // concatenated head outputs, P x (heads * dk)
  FeatureMatrix projected;  // u W_O^T, P x d
  std::vector<double> attn;  // heads x P x P, row i attends over columns j
  std::vector<double> q, k, v;  // heads x P x dk

  double weight(std::size_t head, std::size_t i, std::size_t j) const {
    return attn[(head * positions + i) * positions + j];
  }
};

/// Scaled dot-product self-attention across the rows of F.
AttentionResult multi_head_attention(const FeatureMatrix& F, const EncoderWeights& w);

/// dprojected: P x d. du_extra: P x (heads*dk) added to the gradient of u
/// (the decorrelation path); may be empty. Returns dF.
FeatureMatrix multi_head_attention_backward(const AttentionResult& res, const FeatureMatrix& F,
                                            const EncoderWeights& w,
                                            std::span<const double> dprojected,
                                            std::span<const double> du_extra, EncoderGrads& g);

// ---------------------------------------------------------------------------

/// Cross-head decorrelation of a batch of activation vectors at one position:
/// 0.5 * (||C||_F^2 - ||diag C||^2) with C the biased batch covariance.
/// activations is batch x dim, row-major. When grad is non-empty it receives
/// d loss / d activations (overwritten).
double decorrelation_loss(std::span<const double> activations, std::size_t batch,
                          std::size_t dim, std::span<double> grad = {});

// ---------------------------------------------------------------------------

struct FeedForwardCache {
  std::vector<double> pre;  // W_1 x + b_1
  std::vector<double> act;  // relu(pre)
};

std::vector<double> feed_forward(std::span<const double> x, const EncoderWeights& w,
                                 FeedForwardCache* cache = nullptr);
/// Returns dx.
std::vector<double> feed_forward_backward(const FeedForwardCache& cache,
                                          std::span<const double> x, const EncoderWeights& w,
                                          std::span<const double> dy, EncoderGrads& g);

// ---------------------------------------------------------------------------

struct EncodeResult {
  FeatureMatrix output;  // F*
  AttentionResult attention;
  // Intermediates.
  FeatureMatrix after_norm1;
  std::vector<numerics::LayerNormCache> norm1, norm2;
  std::vector<FeedForwardCache> ffn;
};

/// a = LN1(F + MHA(F)); F* = LN2(a + FFN(a)), row-wise.
EncodeResult encode(const FeatureMatrix& F, const EncoderWeights& w);

/// dout: gradient w.r.t. F*. du_extra as in multi_head_attention_backward.
FeatureMatrix encode_backward(const EncodeResult& res, const FeatureMatrix& F,
                              const EncoderWeights& w, const FeatureMatrix& dout,
                              std::span<const double> du_extra, EncoderGrads& g);

}  // namespace ctxrisk::context
