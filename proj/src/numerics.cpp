#include "ctxrisk/numerics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ctxrisk::numerics {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_product(shape_)) {
    throw std::invalid_argument("tensor value count does not match shape");
  }
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ParamId ParamStore::add(std::string name, std::vector<std::size_t> shape) {
  if (index_.contains(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  ParamEntry e;
  e.name = name;
  e.value = Tensor(shape);
  e.grad = Tensor(shape);
  e.adam_m = Tensor(shape);
  e.adam_v = Tensor(std::move(shape));
  const ParamId id = entries_.size();
  entries_.push_back(std::move(e));
  index_.emplace(std::move(name), id);
  return id;
}

ParamId ParamStore::id(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + std::string(name));
  }
  return it->second;
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

GradTable ParamStore::zero_table() const {
  GradTable t;
  t.reserve(entries_.size());
  for (const auto& e : entries_) t.emplace_back(e.value.size(), 0.0);
  return t;
}

void ParamStore::accumulate(const GradTable& table) {
  if (table.size() != entries_.size()) {
    throw std::invalid_argument("gradient table does not match parameter store");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto g = entries_[i].grad.values();
    const auto& src = table[i];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
  }
}

double softplus(double x) {
  // log(1 + e^x) without overflow
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (y <= 0.0) throw std::domain_error("softplus_inverse requires y > 0");
  return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    out[r] = s;
  }
}

void matvec_t_add(std::span<const double> w, std::size_t rows, std::size_t cols,
                  std::span<const double> dy, std::span<double> dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* row = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * g;
  }
}

void outer_add(std::span<double> dw, std::size_t rows, std::size_t cols,
               std::span<const double> dy, std::span<const double> x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    double* row = dw.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

std::vector<double> softmax(std::span<const double> scores) {
  return softmax(scores, std::vector<bool>(scores.size(), false));
}

std::vector<double> softmax(std::span<const double> scores, const std::vector<bool>& mask) {
  if (mask.size() != scores.size()) {
    throw std::invalid_argument("softmax mask length mismatch");
  }
  double top = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) continue;
    top = std::max(top, scores[i]);
    any = true;
  }
  if (!any) throw std::invalid_argument("empty attention support");

  std::vector<double> out(scores.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) continue;
    out[i] = std::exp(scores[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> dprobs) {
  const double inner = dot(probs, dprobs);
  std::vector<double> ds(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) ds[i] = probs[i] * (dprobs[i] - inner);
  return ds;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps,
                               LayerNormCache* cache) {
  const std::size_t n = x.size();
  if (gain.size() != n || bias.size() != n) {
    throw std::invalid_argument("layer_norm gain/bias length mismatch");
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);

  std::vector<double> out(n);
  std::vector<double> normalized(n);
  for (std::size_t i = 0; i < n; ++i) {
    normalized[i] = (x[i] - mean) * inv_std;
    out[i] = gain[i] * normalized[i] + bias[i];
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return out;
}

std::vector<double> layer_norm_backward(const LayerNormCache& cache,
                                        std::span<const double> gain,
                                        std::span<const double> dy,
                                        std::span<double> dgain, std::span<double> dbias) {
  const std::size_t n = dy.size();
  const auto& xhat = cache.normalized;
  std::vector<double> dxhat(n);
  double mean_d = 0.0;
  double mean_dx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dgain[i] += dy[i] * xhat[i];
    dbias[i] += dy[i];
    dxhat[i] = dy[i] * gain[i];
    mean_d += dxhat[i];
    mean_dx += dxhat[i] * xhat[i];
  }
  mean_d /= static_cast<double>(n);
  mean_dx /= static_cast<double>(n);
  std::vector<double> dx(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] = cache.inv_std * (dxhat[i] - mean_d - xhat[i] * mean_dx);
  }
  return dx;
}

void adam_step(ParamStore& params, const AdamOptions& options) {
  if (!(options.lr > 0.0)) throw std::invalid_argument("adam learning rate must be positive");
  for (auto& e : params) {
    if (!e.grad.all_finite()) {
      throw std::runtime_error("non-finite gradient in parameter " + e.name);
    }
  }
  for (auto& e : params) {
    e.step_count += 1;
    const double t = static_cast<double>(e.step_count);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    auto value = e.value.values();
    auto grad = e.grad.values();
    auto m = e.adam_m.values();
    auto v = e.adam_v.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

GradCheckResult grad_check(const LossWithGrad& loss_fn, ParamStore& params, double h) {
  loss_fn(params);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& e : params) {
    analytic.emplace_back(e.grad.values().begin(), e.grad.values().end());
  }

  GradCheckResult result;
  for (ParamId id = 0; id < params.size(); ++id) {
    auto& e = params.entry(id);
    double worst = 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + h;
      const double up = loss_fn(params);
      e.value[i] = saved - h;
      const double down = loss_fn(params);
      e.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[id][i], numeric));
    }
    result.names.push_back(e.name);
    result.max_rel_error.push_back(worst);
    if (worst >= result.worst) {
      result.worst = worst;
      result.worst_name = e.name;
    }
  }
  // Leave the analytic gradients in place for the caller.
  loss_fn(params);
  return result;
}

}  // namespace ctxrisk::numerics
