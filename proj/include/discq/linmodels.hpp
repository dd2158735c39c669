#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "encoder.hpp"

namespace discq {

struct OptimConfig {
  double learning_rate = 1.0;
  int epochs = 300;
  double l2 = 1e-5;
  int batch_size = 16;
  uint64_t seed = 17;

  bool operator==(const OptimConfig&) const = default;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (l2 < 0.0) throw ConfigError("l2 must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate * l2 >= 1.0)
      throw ConfigError("learning_rate * l2 must be < 1");
  }
};

// ---------------------------------------------------------------------------
// Multinomial logistic regression. Weights are width-major ([index*K + k]) so
// a sparse dot touches K contiguous doubles per feature.

struct SoftmaxModel {
  uint32_t num_classes = 0;
  uint32_t width = 0;
  std::vector<double> weights;  // width * num_classes, [index*K + k]
  std::vector<double> bias;     // num_classes
  std::vector<std::string> class_labels;
  double final_train_loss = 0.0;

  bool operator==(const SoftmaxModel&) const = default;

  double weight_at(uint32_t index, uint32_t k) const {
    return weights[static_cast<size_t>(index) * num_classes + k];
  }
};

namespace detail {

inline void check_example(const FeatureVector& x, uint32_t width) {
  if (x.width != width)
    throw ValidationError("feature width " + std::to_string(x.width) +
                          " does not match model width " + std::to_string(width));
}

// logits[k] = b[k] + scale * sum_j W[j,k] * x_j
inline void sparse_logits(const double* w, const double* b, uint32_t K,
                          double scale, const FeatureVector& x, double* out) {
  for (uint32_t k = 0; k < K; ++k) out[k] = b[k];
  for (const FeatureEntry& e : x.entries) {
    const double* col = w + static_cast<size_t>(e.index) * K;
    double v = scale * static_cast<double>(e.value);
    for (uint32_t k = 0; k < K; ++k) out[k] += col[k] * v;
  }
}

inline void softmax_inplace(double* z, uint32_t K) {
  double m = z[0];
  for (uint32_t k = 1; k < K; ++k) m = std::max(m, z[k]);
  double s = 0.0;
  for (uint32_t k = 0; k < K; ++k) {
    z[k] = std::exp(z[k] - m);
    s += z[k];
  }
  for (uint32_t k = 0; k < K; ++k) z[k] /= s;
}

}  // namespace detail

inline std::pair<int, std::vector<double>> predict_softmax(
    const SoftmaxModel& m, const FeatureVector& x) {
  detail::check_example(x, m.width);
  std::vector<double> z(m.num_classes);
  detail::sparse_logits(m.weights.data(), m.bias.data(), m.num_classes, 1.0, x,
                        z.data());
  detail::softmax_inplace(z.data(), m.num_classes);
  int best = 0;
  for (uint32_t k = 1; k < m.num_classes; ++k)
    if (z[k] > z[best]) best = static_cast<int>(k);  // ties keep lowest index
  return {best, std::move(z)};
}

// Mean cross-entropy + (l2/2)*||W||^2 (bias unregularized); used for loss
// reporting and as the reference objective for gradient checks.
inline double softmax_objective(std::span<const double> weights,
                                std::span<const double> bias, uint32_t K,
                                std::span<const FeatureVector> X,
                                std::span<const int> y, double l2) {
  double loss = 0.0;
  std::vector<double> z(K);
  for (size_t i = 0; i < X.size(); ++i) {
    detail::sparse_logits(weights.data(), bias.data(), K, 1.0, X[i], z.data());
    double lse = logsumexp(z.data(), static_cast<int>(K));
    loss += lse - z[static_cast<size_t>(y[i])];
  }
  loss /= static_cast<double>(X.size());
  double reg = 0.0;
  for (double w : weights) reg += w * w;
  return loss + 0.5 * l2 * reg;
}

// Dense gradient of softmax_objective; meant for small test problems.
inline double softmax_objective_grad(std::span<const double> weights,
                                     std::span<const double> bias, uint32_t K,
                                     std::span<const FeatureVector> X,
                                     std::span<const int> y, double l2,
                                     std::vector<double>& grad_w,
                                     std::vector<double>& grad_b) {
  grad_w.assign(weights.size(), 0.0);
  grad_b.assign(K, 0.0);
  double loss = 0.0;
  std::vector<double> z(K);
  double inv_n = 1.0 / static_cast<double>(X.size());
  for (size_t i = 0; i < X.size(); ++i) {
    detail::sparse_logits(weights.data(), bias.data(), K, 1.0, X[i], z.data());
    double lse = logsumexp(z.data(), static_cast<int>(K));
    loss += lse - z[static_cast<size_t>(y[i])];
    detail::softmax_inplace(z.data(), K);
    z[static_cast<size_t>(y[i])] -= 1.0;
    for (uint32_t k = 0; k < K; ++k) grad_b[k] += inv_n * z[k];
    for (const FeatureEntry& e : X[i].entries)
      for (uint32_t k = 0; k < K; ++k)
        grad_w[static_cast<size_t>(e.index) * K + k] +=
            inv_n * z[k] * static_cast<double>(e.value);
  }
  loss *= inv_n;
  double reg = 0.0;
  for (size_t j = 0; j < weights.size(); ++j) {
    grad_w[j] += l2 * weights[j];
    reg += weights[j] * weights[j];
  }
  return loss + 0.5 * l2 * reg;
}

// Seeded mini-batch gradient descent. L2 decay is applied through a scalar on
// the weight matrix, so each step only touches the features present in the
// batch; gradients within a batch are computed against the batch-start
// weights (exact mini-batch GD, not per-example SGD).
inline SoftmaxModel train_softmax(std::span<const FeatureVector> X,
                                  std::span<const int> y, uint32_t num_classes,
                                  const OptimConfig& optim,
                                  std::vector<std::string> class_labels = {}) {
  optim.validate();
  if (X.empty()) throw ValidationError("train_softmax: empty training set");
  if (X.size() != y.size())
    throw ValidationError("train_softmax: feature/label count mismatch");
  if (num_classes < 2) throw ValidationError("train_softmax: need >= 2 classes");
  if (!class_labels.empty() && class_labels.size() != num_classes)
    throw ValidationError("train_softmax: wrong class_labels length");
  uint32_t width = X[0].width;
  for (const FeatureVector& x : X) detail::check_example(x, width);
  for (int label : y)
    if (label < 0 || label >= static_cast<int>(num_classes))
      throw ValidationError("train_softmax: label out of range");

  const uint32_t K = num_classes;
  const size_t n = X.size();
  std::vector<double> w(static_cast<size_t>(width) * K, 0.0);
  std::vector<double> b(K, 0.0);
  double scale = 1.0;

  Rng rng(optim.seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> probs;  // batch_size * K, batch-start probabilities
  const size_t B = static_cast<size_t>(optim.batch_size);

  for (int epoch = 0; epoch < optim.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < n; start += B) {
      size_t count = std::min(B, n - start);
      probs.resize(count * K);
      for (size_t i = 0; i < count; ++i) {
        double* z = probs.data() + i * K;
        detail::sparse_logits(w.data(), b.data(), K, scale, X[order[start + i]],
                              z);
        detail::softmax_inplace(z, K);
      }
      scale *= 1.0 - optim.learning_rate * optim.l2;
      double step = optim.learning_rate / static_cast<double>(count);
      double wstep = step / scale;
      for (size_t i = 0; i < count; ++i) {
        const FeatureVector& x = X[order[start + i]];
        double* z = probs.data() + i * K;
        z[static_cast<size_t>(y[order[start + i]])] -= 1.0;
        for (uint32_t k = 0; k < K; ++k) b[k] -= step * z[k];
        for (const FeatureEntry& e : x.entries) {
          double* col = w.data() + static_cast<size_t>(e.index) * K;
          double v = wstep * static_cast<double>(e.value);
          for (uint32_t k = 0; k < K; ++k) col[k] -= v * z[k];
        }
      }
      if (scale < 1e-6) {  // fold the scalar back in before it underflows
        for (double& wi : w) wi *= scale;
        scale = 1.0;
      }
    }
  }
  if (scale != 1.0)
    for (double& wi : w) wi *= scale;

  SoftmaxModel m;
  m.num_classes = K;
  m.width = width;
  m.weights = std::move(w);
  m.bias = std::move(b);
  m.class_labels = std::move(class_labels);
  m.final_train_loss = softmax_objective(m.weights, m.bias, K, X, y, optim.l2);
  return m;
}

// A zero-weight model: predicts class 0 with uniform probabilities. Used as
// the constant-prior fallback when a routing branch has no training data.
inline SoftmaxModel uniform_softmax(uint32_t num_classes, uint32_t width,
                                    std::vector<std::string> class_labels) {
  SoftmaxModel m;
  m.num_classes = num_classes;
  m.width = width;
  m.weights.assign(static_cast<size_t>(width) * num_classes, 0.0);
  m.bias.assign(num_classes, 0.0);
  m.class_labels = std::move(class_labels);
  return m;
}

// ---------------------------------------------------------------------------
// Ordinary least squares with an intercept and a tiny ridge term for
// numerical stability (applied to every diagonal entry, intercept included).

struct LinearRegressor {
  std::vector<double> weights;
  double intercept = 0.0;

  bool operator==(const LinearRegressor&) const = default;
};

namespace detail {

// Gaussian elimination with partial pivoting; m is n x (n+1) augmented.
inline std::vector<double> solve_dense(std::vector<std::vector<double>>& m) {
  const size_t n = m.size();
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    if (std::abs(m[piv][col]) < 1e-300)
      throw ValidationError("ols: singular normal equations");
    std::swap(m[col], m[piv]);
    for (size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = m[r][col] / m[col][col];
      if (f == 0.0) continue;
      for (size_t c = col; c <= n; ++c) m[r][c] -= f * m[col][c];
    }
  }
  std::vector<double> x(n);
  for (size_t i = 0; i < n; ++i) x[i] = m[i][n] / m[i][i];
  return x;
}

}  // namespace detail

inline LinearRegressor fit_ols(const std::vector<std::vector<double>>& X,
                               const std::vector<double>& y,
                               double ridge = 1e-8) {
  if (X.empty()) throw ValidationError("ols: empty training set");
  if (X.size() != y.size())
    throw ValidationError("ols: feature/target count mismatch");
  if (ridge < 0.0) throw ConfigError("ols: ridge must be non-negative");
  const size_t d = X[0].size();
  for (const auto& row : X)
    if (row.size() != d) throw ValidationError("ols: ragged feature rows");

  // Normal equations over [features..., 1].
  const size_t p = d + 1;
  std::vector<std::vector<double>> m(p, std::vector<double>(p + 1, 0.0));
  std::vector<double> a(p);
  for (size_t i = 0; i < X.size(); ++i) {
    for (size_t j = 0; j < d; ++j) a[j] = X[i][j];
    a[d] = 1.0;
    for (size_t r = 0; r < p; ++r) {
      for (size_t c = 0; c < p; ++c) m[r][c] += a[r] * a[c];
      m[r][p] += a[r] * y[i];
    }
  }
  for (size_t r = 0; r < p; ++r) m[r][r] += ridge;

  std::vector<double> sol = detail::solve_dense(m);
  LinearRegressor reg;
  reg.weights.assign(sol.begin(), sol.begin() + static_cast<long>(d));
  reg.intercept = sol[d];
  return reg;
}

inline double predict_linear(const LinearRegressor& m,
                             std::span<const double> x) {
  if (x.size() != m.weights.size())
    throw ValidationError("predict_linear: feature count mismatch");
  double s = m.intercept;
  for (size_t j = 0; j < x.size(); ++j) s += m.weights[j] * x[j];
  return s;
}

}  // namespace discq
