#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxrisk::numerics {

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  void fill(double v);
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

using ParamId = std::size_t;

/// One gradient buffer per parameter entry, aligned with ParamStore order.
using GradTable = std::vector<std::vector<double>>;

struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::int64_t step_count = 0;
};

/// Named learnable tensors with gradients and Adam moments.
///
/// Single writer: forward passes may read a frozen store concurrently, but
/// gradient accumulation and updates happen from one thread.
class ParamStore {
 public:
  ParamId add(std::string name, std::vector<std::size_t> shape);

  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;

  ParamEntry& entry(ParamId id) { return entries_[id]; }
  const ParamEntry& entry(ParamId id) const { return entries_[id]; }

  std::span<double> value(ParamId id) { return entries_[id].value.values(); }
  std::span<const double> value(ParamId id) const { return entries_[id].value.values(); }
  std::span<double> grad(ParamId id) { return entries_[id].grad.values(); }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  GradTable zero_table() const;
  void accumulate(const GradTable& table);

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, ParamId> index_;
};

// ---------------------------------------------------------------------------
// Scalar and vector kernels. Matrices are row-major spans of rows*cols.

double softplus(double x);
double softplus_inverse(double y);

double dot(std::span<const double> a, std::span<const double> b);

/// out = W x, W is rows x cols.
void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> out);
/// dx += W^T dy.
void matvec_t_add(std::span<const double> w, std::size_t rows, std::size_t cols,
                  std::span<const double> dy, std::span<double> dx);
/// dW += dy x^T.
void outer_add(std::span<double> dw, std::size_t rows, std::size_t cols,
               std::span<const double> dy, std::span<const double> x);

void axpy(double a, std::span<const double> x, std::span<double> y);

// ---------------------------------------------------------------------------
// Differentiable ops.

/// Numerically stable softmax. Throws "empty attention support" when every
/// position is masked. mask[i] == true hides position i.
std::vector<double> softmax(std::span<const double> scores);
std::vector<double> softmax(std::span<const double> scores, const std::vector<bool>& mask);

/// Gradient of the scores given the softmax output and its upstream gradient.
std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> dprobs);

constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  std::vector<double> normalized;
  double inv_std = 0.0;
};

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps = kLayerNormEps,
                               LayerNormCache* cache = nullptr);

/// Returns dx; accumulates into dgain/dbias.
std::vector<double> layer_norm_backward(const LayerNormCache& cache,
                                        std::span<const double> gain,
                                        std::span<const double> dy,
                                        std::span<double> dgain, std::span<double> dbias);

// ---------------------------------------------------------------------------
// Optimisation.

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every entry. Gradients are left as-is.
void adam_step(ParamStore& params, const AdamOptions& options = {});

struct GradCheckResult {
  std::vector<std::string> names;
  std::vector<double> max_rel_error;  // per entry
  double worst = 0.0;
  std::string worst_name;
};

/// loss_fn evaluates the loss and fills params' gradients (zeroing them first).
using LossWithGrad = std::function<double(ParamStore&)>;

/// Central-difference check of every scalar parameter.
GradCheckResult grad_check(const LossWithGrad& loss_fn, ParamStore& params, double h = 1e-5);

double relative_error(double analytic, double numeric);

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace ctxrisk::numerics

