#pragma once

#include <vector>

#include "rbfer/balance.hpp"
#include "rbfer/tensor.hpp"

namespace rbfer {

/// Re-balanced smooth targets, N x L. Each row is a probability
/// distribution; alpha = 0 reduces to exact one-hot rows.
struct SmoothLabels {
  Tensor values;
  double alpha = 0.0;
};

struct LossBreakdown {
  double cls = 0.0;
  double cons = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

/// Row-wise stable softmax of N x L logits.
Tensor softmax_rows(const Tensor& logits);

/// -(1/N) * sum_i log softmax(logits)_{i, labels[i]} for a single view,
/// computed through log-sum-exp.
double nll_loss(const Tensor& logits, const std::vector<int>& labels);

/// Adds upstream * d nll/d logits = upstream * (softmax - onehot)/N.
void nll_loss_backward(const Tensor& logits, const std::vector<int>& labels,
                       double upstream, Tensor* grad_logits);

/// Dual-view classification loss: the per-view negative log-likelihoods of
/// the original and flipped logits are summed (not averaged).
double dual_view_ce(const Tensor& logits, const Tensor& logits_flipped,
                    const std::vector<int>& labels);

/// y_tilde(i,l) = (1 - alpha) * onehot(i,l) + alpha * B_l / L with the
/// normalized balance weights, so rows sum to 1.
SmoothLabels make_smooth_labels(const std::vector<int>& labels,
                                const BalanceWeights& weights, double alpha,
                                int num_classes);

/// -(1/N) * sum_i sum_l y_tilde(i,l) * log softmax(logits)_{i,l}.
double smooth_ce(const Tensor& logits, const SmoothLabels& targets);

/// Adds upstream * (softmax - y_tilde)/N into grad_logits.
void smooth_ce_backward(const Tensor& logits, const SmoothLabels& targets,
                        double upstream, Tensor* grad_logits);

/// total = cls + lambda * cons.
LossBreakdown total_loss(double cls, double cons, double lambda);

}  // namespace rbfer
