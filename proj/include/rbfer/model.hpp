#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rbfer/attention.hpp"
#include "rbfer/rng.hpp"
#include "rbfer/tensor.hpp"

namespace rbfer {

/// Named view of a learnable tensor and its gradient accumulator.
struct Param {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

/// 3x3 same-padding convolution, stride 1, no bias (normalization follows).
/// forward caches the im2col buffer; backward consumes it, accumulates the
/// weight gradient and returns the input gradient.
class Conv2d {
 public:
  Conv2d(int in_channels, int out_channels);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_y);
  void init(Rng& rng);  // He-normal, fan-in = in_channels * 9

  Tensor weight;       // out x in x 3 x 3
  Tensor grad_weight;

 private:
  int in_ch_, out_ch_;
  std::vector<double> col_;  // (in*9) x (N*H*W)
  int n_ = 0, h_ = 0, w_ = 0;
};

/// Per-channel batch normalization over (N, H, W).
///
/// Training uses batch statistics (biased variance) and updates the running
/// estimates as running = (1 - momentum) * running + momentum * batch.
/// Evaluation normalizes with the stored running statistics, so it is
/// batch-independent and deterministic.
class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels);

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_y);

  Tensor gamma, beta, grad_gamma, grad_beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  int ch_;
  bool last_training_ = false;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_y);

 private:
  std::vector<bool> active_;
};

/// 2x2 average pooling with stride 2.
class AvgPool2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_y);

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

/// Fully connected head layer: logits = pooled * W^T + b.
class Linear {
 public:
  Linear(int in_features, int out_features);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_y);
  void init(Rng& rng);

  Tensor weight;  // out x in — shared between logits and attention maps
  Tensor bias;    // out
  Tensor grad_weight, grad_bias;

 private:
  Tensor input_;
};

/// Spatial mean per channel: N x C x H x W -> N x C.
Tensor gap(const Tensor& features);
Tensor gap_backward(const Tensor& grad_pooled, int height, int width);

struct BackboneConfig {
  int input_size = 32;
  int in_channels = 1;
  std::vector<int> channels = {16, 32, 64};
};

/// Three-block (by default) convolutional feature extractor: each block is
/// conv3x3 -> batchnorm -> relu -> 2x downsample. A 32x32 input with the
/// default channel plan yields 64 x 4 x 4 feature maps.
class ReferenceBackbone {
 public:
  explicit ReferenceBackbone(const BackboneConfig& config);

  Tensor forward(const Tensor& images, bool training);
  Tensor backward(const Tensor& grad_features);
  void init(Rng& rng);

  int feature_channels() const { return config_.channels.back(); }
  int feature_size() const;
  const BackboneConfig& config() const { return config_; }
  void collect_state(std::vector<Param>* params, std::vector<Param>* buffers);

 private:
  BackboneConfig config_;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm2d> norms_;
  std::vector<ReLU> relus_;
  std::vector<AvgPool2> pools_;
};

struct ModelConfig {
  BackboneConfig backbone;
  int num_classes = 7;
};

/// Backbone plus GAP/FC head. The FC weight matrix is shared between the
/// logit path and the attention-map path; the bias enters logits only.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  void init_params(std::uint64_t seed);

  /// Backbone features for a (possibly stacked multi-view) batch.
  Tensor forward_features(const Tensor& images, bool training);

  /// GAP + FC on cached-compatible features. Caches the pooled activations.
  Tensor forward_logits(const Tensor& features);

  /// Backpropagates grad_logits through the head and, together with an
  /// optional extra feature-space gradient (the attention path), through
  /// the backbone. Accumulates into all parameter gradients.
  void backward(const Tensor& grad_logits, const Tensor* grad_features_extra);

  std::vector<Param> params();
  std::vector<Param> buffers();  // batchnorm running statistics
  void zero_grads();
  long param_count();

  const ModelConfig& config() const { return config_; }
  ReferenceBackbone& backbone() { return backbone_; }
  Linear& fc() { return fc_; }

 private:
  ModelConfig config_;
  ReferenceBackbone backbone_;
  Linear fc_;
  int feat_h_ = 0, feat_w_ = 0;
};

struct DualViewOutputs {
  Tensor features, features_flipped;
  Tensor logits, logits_flipped;
  AttentionMaps maps, maps_flipped;  // pre-rebalance
};

Tensor batch_slice(const Tensor& t, int from, int to);
Tensor batch_concat(const Tensor& a, const Tensor& b);

/// Runs both views (x and flip(x)) through shared parameters as one
/// stacked batch, so a training step sees a single set of normalization
/// statistics, then computes per-view logits and attention maps.
DualViewOutputs forward_dual(Model& model, const Tensor& images, bool training);

/// Same as forward_dual but with an arbitrary second view.
DualViewOutputs forward_two_views(Model& model, const Tensor& view1,
                                  const Tensor& view2, bool training);

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(std::vector<Param> params, double lr, double weight_decay);

  void set_lr(double lr) { lr_ = lr; }
  void step();

 private:
  std::vector<Param> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, weight_decay_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

}  // namespace rbfer
