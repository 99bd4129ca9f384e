#pragma once

#include <string>

#include "rbfer/balance.hpp"
#include "rbfer/tensor.hpp"

namespace rbfer {

/// Per-class spatial activation maps, N x L x H x W. `rebalanced` records
/// whether the class-balance weighting has been applied.
struct AttentionMaps {
  Tensor values;
  bool rebalanced = false;
};

enum class ConsistencyDistance { kAbs, kSquared };

ConsistencyDistance consistency_distance_from_string(const std::string& name);
std::string to_string(ConsistencyDistance d);

/// A(i,l,h,w) = sum_c W(l,c) * F(i,c,h,w).
///
/// `features` is N x C x H x W, `fc_weight` is L x C. Bilinear in both
/// inputs; compute_cam_backward provides the exact adjoint so gradients
/// reach both the backbone features and the shared classifier weights.
AttentionMaps compute_cam(const Tensor& features, const Tensor& fc_weight);

/// Accumulates d loss/d features and d loss/d fc_weight given
/// d loss/d maps. Gradient buffers must be pre-shaped; contributions are
/// added, not assigned.
void compute_cam_backward(const Tensor& features, const Tensor& fc_weight,
                          const Tensor& grad_maps, Tensor* grad_features,
                          Tensor* grad_weight);

/// M(i,l,h,w) = B_l * A(i,l,h,w) with the normalized balance weights.
/// Rejects maps that were already rebalanced.
AttentionMaps rebalance_attention(const AttentionMaps& maps,
                                  const BalanceWeights& weights);

/// Horizontal reversal along the width axis. Exact involution.
Tensor flip_w(const Tensor& t);
AttentionMaps flip_w(const AttentionMaps& maps);

/// Mean per-element distance between two rebalanced map stacks:
/// (1/(N*L*H*W)) * sum d(M - M_tilde_flipped), where d is |x| or x^2.
double consistency_loss(const AttentionMaps& m,
                        const AttentionMaps& m_tilde_flipped,
                        ConsistencyDistance distance);

/// Adds upstream * d loss/d m and upstream * d loss/d m_tilde_flipped
/// into the given gradient buffers (either may be null).
void consistency_loss_backward(const AttentionMaps& m,
                               const AttentionMaps& m_tilde_flipped,
                               ConsistencyDistance distance, double upstream,
                               Tensor* grad_m, Tensor* grad_m_tilde_flipped);

}  // namespace rbfer
