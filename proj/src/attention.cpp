#include "rbfer/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "rbfer/errors.hpp"

namespace rbfer {

ConsistencyDistance consistency_distance_from_string(const std::string& name) {
  if (name == "abs") return ConsistencyDistance::kAbs;
  if (name == "squared") return ConsistencyDistance::kSquared;
  throw ConfigError("unknown consistency distance '" + name +
                    "' (expected abs or squared)");
}

std::string to_string(ConsistencyDistance d) {
  return d == ConsistencyDistance::kAbs ? "abs" : "squared";
}

AttentionMaps compute_cam(const Tensor& features, const Tensor& fc_weight) {
  if (features.rank() != 4) throw std::invalid_argument("features must be 4-D");
  if (fc_weight.rank() != 2) throw std::invalid_argument("weights must be 2-D");
  const int n = features.shape(0), c = features.shape(1);
  const int h = features.shape(2), w = features.shape(3);
  const int l = fc_weight.shape(0);
  if (fc_weight.shape(1) != c) {
    throw std::invalid_argument("channel mismatch: features C=" +
                                std::to_string(c) + ", weights C=" +
                                std::to_string(fc_weight.shape(1)));
  }
  AttentionMaps maps;
  maps.values = Tensor({n, l, h, w});
  maps.rebalanced = false;
  const int hw = h * w;
  for (int i = 0; i < n; ++i) {
    // (L x C) * (C x HW) -> (L x HW)
    gemm(false, false, l, hw, c, 1.0, fc_weight.data(),
         features.data() + static_cast<std::size_t>(i) * c * hw, 0.0,
         maps.values.data() + static_cast<std::size_t>(i) * l * hw);
  }
  return maps;
}

void compute_cam_backward(const Tensor& features, const Tensor& fc_weight,
                          const Tensor& grad_maps, Tensor* grad_features,
                          Tensor* grad_weight) {
  const int n = features.shape(0), c = features.shape(1);
  const int h = features.shape(2), w = features.shape(3);
  const int l = fc_weight.shape(0);
  const int hw = h * w;
  for (int i = 0; i < n; ++i) {
    const double* g = grad_maps.data() + static_cast<std::size_t>(i) * l * hw;
    const double* f = features.data() + static_cast<std::size_t>(i) * c * hw;
    if (grad_features) {
      // dF = W^T (C x L) * dA (L x HW)
      gemm(true, false, c, hw, l, 1.0, fc_weight.data(), g, 1.0,
           grad_features->data() + static_cast<std::size_t>(i) * c * hw);
    }
    if (grad_weight) {
      // dW = dA (L x HW) * F^T (HW x C)
      gemm(false, true, l, c, hw, 1.0, g, f, 1.0, grad_weight->data());
    }
  }
}

AttentionMaps rebalance_attention(const AttentionMaps& maps,
                                  const BalanceWeights& weights) {
  if (maps.rebalanced) {
    throw std::invalid_argument("attention maps are already rebalanced");
  }
  const int n = maps.values.shape(0), l = maps.values.shape(1);
  const int hw = maps.values.shape(2) * maps.values.shape(3);
  if (l != weights.num_classes()) {
    throw std::invalid_argument("class count mismatch: maps L=" +
                                std::to_string(l) + ", weights L=" +
                                std::to_string(weights.num_classes()));
  }
  AttentionMaps out;
  out.values = maps.values;
  out.rebalanced = true;
  for (int i = 0; i < n; ++i) {
    for (int cls = 0; cls < l; ++cls) {
      double* plane =
          out.values.data() + (static_cast<std::size_t>(i) * l + cls) * hw;
      const double b = weights.normalized[static_cast<std::size_t>(cls)];
      for (int p = 0; p < hw; ++p) plane[p] *= b;
    }
  }
  return out;
}

Tensor flip_w(const Tensor& t) {
  if (t.rank() != 4) throw std::invalid_argument("flip_w expects a 4-D tensor");
  const int n = t.shape(0), c = t.shape(1), h = t.shape(2), w = t.shape(3);
  Tensor out({n, c, h, w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(i, ch, y, x) = t.at(i, ch, y, w - 1 - x);
  return out;
}

AttentionMaps flip_w(const AttentionMaps& maps) {
  return AttentionMaps{flip_w(maps.values), maps.rebalanced};
}

namespace {
void check_consistency_inputs(const AttentionMaps& a, const AttentionMaps& b) {
  if (!a.rebalanced || !b.rebalanced) {
    throw std::invalid_argument(
        "consistency loss requires rebalanced attention maps");
  }
  if (!a.values.same_shape(b.values)) {
    throw std::invalid_argument("consistency loss: shape mismatch");
  }
}
}  // namespace

double consistency_loss(const AttentionMaps& m,
                        const AttentionMaps& m_tilde_flipped,
                        ConsistencyDistance distance) {
  check_consistency_inputs(m, m_tilde_flipped);
  const std::size_t total = m.values.size();
  double sum = 0.0;
  if (distance == ConsistencyDistance::kSquared) {
    for (std::size_t i = 0; i < total; ++i) {
      const double d = m.values[i] - m_tilde_flipped.values[i];
      sum += d * d;
    }
  } else {
    for (std::size_t i = 0; i < total; ++i) {
      sum += std::abs(m.values[i] - m_tilde_flipped.values[i]);
    }
  }
  return sum / static_cast<double>(total);
}

void consistency_loss_backward(const AttentionMaps& m,
                               const AttentionMaps& m_tilde_flipped,
                               ConsistencyDistance distance, double upstream,
                               Tensor* grad_m, Tensor* grad_m_tilde_flipped) {
  check_consistency_inputs(m, m_tilde_flipped);
  const std::size_t total = m.values.size();
  const double scale = upstream / static_cast<double>(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double d = m.values[i] - m_tilde_flipped.values[i];
    double g;
    if (distance == ConsistencyDistance::kSquared) {
      g = 2.0 * d * scale;
    } else {
      g = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * scale;
    }
    if (grad_m) (*grad_m)[i] += g;
    if (grad_m_tilde_flipped) (*grad_m_tilde_flipped)[i] -= g;
  }
}

}  // namespace rbfer
