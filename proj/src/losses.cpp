#include "rbfer/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rbfer/errors.hpp"

namespace rbfer {

namespace {

void check_labels(const std::vector<int>& labels, int n, int l) {
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("label count does not match batch size");
  }
  for (int y : labels) {
    if (y < 0 || y >= l) {
      throw std::invalid_argument("label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(l) + ")");
    }
  }
}

// Row-wise log softmax written into `out` (N x L).
void log_softmax_rows(const Tensor& logits, Tensor* out) {
  const int n = logits.shape(0), l = logits.shape(1);
  for (int i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < l; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < l; ++j) sum += std::exp(logits.at(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < l; ++j) out->at(i, j) = logits.at(i, j) - lse;
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = Tensor::zeros_like(logits);
  log_softmax_rows(logits, &out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return out;
}

double nll_loss(const Tensor& logits, const std::vector<int>& labels) {
  const int n = logits.shape(0), l = logits.shape(1);
  check_labels(labels, n, l);
  Tensor logp = Tensor::zeros_like(logits);
  log_softmax_rows(logits, &logp);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += logp.at(i, labels[static_cast<std::size_t>(i)]);
  return -sum / static_cast<double>(n);
}

void nll_loss_backward(const Tensor& logits, const std::vector<int>& labels,
                       double upstream, Tensor* grad_logits) {
  const int n = logits.shape(0), l = logits.shape(1);
  check_labels(labels, n, l);
  const Tensor p = softmax_rows(logits);
  const double scale = upstream / static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < l; ++j) {
      double g = p.at(i, j);
      if (j == labels[static_cast<std::size_t>(i)]) g -= 1.0;
      grad_logits->at(i, j) += scale * g;
    }
  }
}

double dual_view_ce(const Tensor& logits, const Tensor& logits_flipped,
                    const std::vector<int>& labels) {
  if (!logits.same_shape(logits_flipped)) {
    throw std::invalid_argument("dual_view_ce: view shape mismatch");
  }
  return nll_loss(logits, labels) + nll_loss(logits_flipped, labels);
}

SmoothLabels make_smooth_labels(const std::vector<int>& labels,
                                const BalanceWeights& weights, double alpha,
                                int num_classes) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (weights.num_classes() != num_classes) {
    throw std::invalid_argument("balance weight length does not match L");
  }
  const int n = static_cast<int>(labels.size());
  check_labels(labels, n, num_classes);
  SmoothLabels out;
  out.alpha = alpha;
  out.values = Tensor({n, num_classes});
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < num_classes; ++l) {
      const double onehot = (l == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
      out.values.at(i, l) =
          (1.0 - alpha) * onehot +
          alpha * weights.normalized[static_cast<std::size_t>(l)] /
              static_cast<double>(num_classes);
    }
  }
  return out;
}

double smooth_ce(const Tensor& logits, const SmoothLabels& targets) {
  if (!logits.same_shape(targets.values)) {
    throw std::invalid_argument("smooth_ce: shape mismatch");
  }
  const int n = logits.shape(0), l = logits.shape(1);
  Tensor logp = Tensor::zeros_like(logits);
  log_softmax_rows(logits, &logp);
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < l; ++j) sum += targets.values.at(i, j) * logp.at(i, j);
  return -sum / static_cast<double>(n);
}

void smooth_ce_backward(const Tensor& logits, const SmoothLabels& targets,
                        double upstream, Tensor* grad_logits) {
  if (!logits.same_shape(targets.values)) {
    throw std::invalid_argument("smooth_ce: shape mismatch");
  }
  const int n = logits.shape(0), l = logits.shape(1);
  const Tensor p = softmax_rows(logits);
  const double scale = upstream / static_cast<double>(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < l; ++j)
      grad_logits->at(i, j) += scale * (p.at(i, j) - targets.values.at(i, j));
}

LossBreakdown total_loss(double cls, double cons, double lambda) {
  if (lambda < 0.0) {
    throw ConfigError("lambda must be >= 0, got " + std::to_string(lambda));
  }
  LossBreakdown b;
  b.cls = cls;
  b.cons = cons;
  b.lambda = lambda;
  b.total = cls + lambda * cons;
  return b;
}

}  // namespace rbfer
