#include "rbfer/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "rbfer/errors.hpp"

namespace rbfer {

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels)
    : weight({out_channels, in_channels, 3, 3}),
      grad_weight({out_channels, in_channels, 3, 3}),
      in_ch_(in_channels),
      out_ch_(out_channels) {}

void Conv2d::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / (in_ch_ * 9.0));
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, stddev);
}

Tensor Conv2d::forward(const Tensor& x) {
  n_ = x.shape(0);
  h_ = x.shape(2);
  w_ = x.shape(3);
  if (x.shape(1) != in_ch_) {
    throw std::invalid_argument("Conv2d: expected " + std::to_string(in_ch_) +
                                " input channels, got " + std::to_string(x.shape(1)));
  }
  const int hw = h_ * w_;
  const std::size_t cols = static_cast<std::size_t>(n_) * hw;
  const int krows = in_ch_ * 9;
  col_.assign(static_cast<std::size_t>(krows) * cols, 0.0);

  for (int i = 0; i < n_; ++i) {
    for (int c = 0; c < in_ch_; ++c) {
      const double* src = x.data() + (static_cast<std::size_t>(i) * in_ch_ + c) * hw;
      for (int kr = 0; kr < 3; ++kr) {
        for (int kc = 0; kc < 3; ++kc) {
          double* dst = col_.data() +
                        (static_cast<std::size_t>(c) * 9 + kr * 3 + kc) * cols +
                        static_cast<std::size_t>(i) * hw;
          for (int y = 0; y < h_; ++y) {
            const int sy = y + kr - 1;
            if (sy < 0 || sy >= h_) continue;
            for (int xx = 0; xx < w_; ++xx) {
              const int sx = xx + kc - 1;
              if (sx < 0 || sx >= w_) continue;
              dst[y * w_ + xx] = src[sy * w_ + sx];
            }
          }
        }
      }
    }
  }

  // (out x in*9) * (in*9 x N*HW)
  std::vector<double> ymat(static_cast<std::size_t>(out_ch_) * cols);
  gemm(false, false, out_ch_, static_cast<int>(cols), krows, 1.0, weight.data(),
       col_.data(), 0.0, ymat.data());

  Tensor y({n_, out_ch_, h_, w_});
  for (int o = 0; o < out_ch_; ++o) {
    for (int i = 0; i < n_; ++i) {
      std::memcpy(y.data() + (static_cast<std::size_t>(i) * out_ch_ + o) * hw,
                  ymat.data() + static_cast<std::size_t>(o) * cols +
                      static_cast<std::size_t>(i) * hw,
                  sizeof(double) * static_cast<std::size_t>(hw));
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_y) {
  const int hw = h_ * w_;
  const std::size_t cols = static_cast<std::size_t>(n_) * hw;
  const int krows = in_ch_ * 9;

  std::vector<double> gmat(static_cast<std::size_t>(out_ch_) * cols);
  for (int o = 0; o < out_ch_; ++o) {
    for (int i = 0; i < n_; ++i) {
      std::memcpy(gmat.data() + static_cast<std::size_t>(o) * cols +
                      static_cast<std::size_t>(i) * hw,
                  grad_y.data() + (static_cast<std::size_t>(i) * out_ch_ + o) * hw,
                  sizeof(double) * static_cast<std::size_t>(hw));
    }
  }

  // dW += dY * col^T
  gemm(false, true, out_ch_, krows, static_cast<int>(cols), 1.0, gmat.data(),
       col_.data(), 1.0, grad_weight.data());

  // dcol = W^T * dY
  std::vector<double> gcol(static_cast<std::size_t>(krows) * cols);
  gemm(true, false, krows, static_cast<int>(cols), out_ch_, 1.0, weight.data(),
       gmat.data(), 0.0, gcol.data());

  Tensor gx({n_, in_ch_, h_, w_});
  for (int i = 0; i < n_; ++i) {
    for (int c = 0; c < in_ch_; ++c) {
      double* dst = gx.data() + (static_cast<std::size_t>(i) * in_ch_ + c) * hw;
      for (int kr = 0; kr < 3; ++kr) {
        for (int kc = 0; kc < 3; ++kc) {
          const double* src = gcol.data() +
                              (static_cast<std::size_t>(c) * 9 + kr * 3 + kc) * cols +
                              static_cast<std::size_t>(i) * hw;
          for (int y = 0; y < h_; ++y) {
            const int sy = y + kr - 1;
            if (sy < 0 || sy >= h_) continue;
            for (int xx = 0; xx < w_; ++xx) {
              const int sx = xx + kc - 1;
              if (sx < 0 || sx >= w_) continue;
              dst[sy * w_ + sx] += src[y * w_ + xx];
            }
          }
        }
      }
    }
  }
  return gx;
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels)
    : gamma({channels}),
      beta({channels}),
      grad_gamma({channels}),
      grad_beta({channels}),
      running_mean({channels}),
      running_var({channels}),
      ch_(channels) {
  gamma.fill(1.0);
  running_var.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  const int n = x.shape(0), h = x.shape(2), w = x.shape(3);
  if (x.shape(1) != ch_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
  const int hw = h * w;
  const double m = static_cast<double>(n) * hw;
  last_training_ = training;

  Tensor y({n, ch_, h, w});
  inv_std_.assign(static_cast<std::size_t>(ch_), 0.0);
  if (training) xhat_ = Tensor({n, ch_, h, w});

  for (int c = 0; c < ch_; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0, sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
        for (int k = 0; k < hw; ++k) {
          sum += p[k];
          sq += p[k] * p[k];
        }
      }
      mean = sum / m;
      var = std::max(0.0, sq / m - mean * mean);
      running_mean[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * running_mean[static_cast<std::size_t>(c)] + momentum * mean;
      running_var[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * running_var[static_cast<std::size_t>(c)] + momentum * var;
    } else {
      mean = running_mean[static_cast<std::size_t>(c)];
      var = running_var[static_cast<std::size_t>(c)];
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std_[static_cast<std::size_t>(c)] = inv;
    const double g = gamma[static_cast<std::size_t>(c)];
    const double b = beta[static_cast<std::size_t>(c)];
    for (int i = 0; i < n; ++i) {
      const double* p = x.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
      double* q = y.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
      double* xh = training
                       ? xhat_.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw
                       : nullptr;
      for (int k = 0; k < hw; ++k) {
        const double normed = (p[k] - mean) * inv;
        if (xh) xh[k] = normed;
        q[k] = g * normed + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_y) {
  const int n = grad_y.shape(0), h = grad_y.shape(2), w = grad_y.shape(3);
  const int hw = h * w;
  const double m = static_cast<double>(n) * hw;
  Tensor gx({n, ch_, h, w});

  for (int c = 0; c < ch_; ++c) {
    const double g = gamma[static_cast<std::size_t>(c)];
    const double inv = inv_std_[static_cast<std::size_t>(c)];
    if (!last_training_) {
      // Running statistics are constants in eval mode.
      for (int i = 0; i < n; ++i) {
        const double* gy = grad_y.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
        double* gq = gx.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
        for (int k = 0; k < hw; ++k) gq[k] = gy[k] * g * inv;
      }
      continue;
    }
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* gy = grad_y.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
      const double* xh = xhat_.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
      for (int k = 0; k < hw; ++k) {
        sum_gy += gy[k];
        sum_gy_xhat += gy[k] * xh[k];
      }
    }
    grad_beta[static_cast<std::size_t>(c)] += sum_gy;
    grad_gamma[static_cast<std::size_t>(c)] += sum_gy_xhat;
    for (int i = 0; i < n; ++i) {
      const double* gy = grad_y.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
      const double* xh = xhat_.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
      double* gq = gx.data() + (static_cast<std::size_t>(i) * ch_ + c) * hw;
      for (int k = 0; k < hw; ++k) {
        gq[k] = g * inv * (gy[k] - sum_gy / m - xh[k] * sum_gy_xhat / m);
      }
    }
  }
  return gx;
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor y = x;
  active_.assign(x.size(), false);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) {
      active_[i] = true;
    } else {
      y[i] = 0.0;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_y) {
  Tensor gx = grad_y;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    if (!active_[i]) gx[i] = 0.0;
  }
  return gx;
}

// -------------------------------------------------------------- AvgPool2

Tensor AvgPool2::forward(const Tensor& x) {
  n_ = x.shape(0);
  c_ = x.shape(1);
  h_ = x.shape(2);
  w_ = x.shape(3);
  if (h_ % 2 != 0 || w_ % 2 != 0) {
    throw std::invalid_argument("AvgPool2 requires even spatial dims");
  }
  Tensor y({n_, c_, h_ / 2, w_ / 2});
  for (int i = 0; i < n_; ++i)
    for (int c = 0; c < c_; ++c)
      for (int yo = 0; yo < h_ / 2; ++yo)
        for (int xo = 0; xo < w_ / 2; ++xo)
          y.at(i, c, yo, xo) =
              0.25 * (x.at(i, c, 2 * yo, 2 * xo) + x.at(i, c, 2 * yo, 2 * xo + 1) +
                      x.at(i, c, 2 * yo + 1, 2 * xo) +
                      x.at(i, c, 2 * yo + 1, 2 * xo + 1));
  return y;
}

Tensor AvgPool2::backward(const Tensor& grad_y) {
  Tensor gx({n_, c_, h_, w_});
  for (int i = 0; i < n_; ++i)
    for (int c = 0; c < c_; ++c)
      for (int yo = 0; yo < h_ / 2; ++yo)
        for (int xo = 0; xo < w_ / 2; ++xo) {
          const double g = 0.25 * grad_y.at(i, c, yo, xo);
          gx.at(i, c, 2 * yo, 2 * xo) = g;
          gx.at(i, c, 2 * yo, 2 * xo + 1) = g;
          gx.at(i, c, 2 * yo + 1, 2 * xo) = g;
          gx.at(i, c, 2 * yo + 1, 2 * xo + 1) = g;
        }
  return gx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : weight({out_features, in_features}),
      bias({out_features}),
      grad_weight({out_features, in_features}),
      grad_bias({out_features}) {}

void Linear::init(Rng& rng) {
  const double stddev = std::sqrt(1.0 / weight.shape(1));
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, stddev);
  bias.zero();
}

Tensor Linear::forward(const Tensor& x) {
  if (x.shape(1) != weight.shape(1)) {
    throw std::invalid_argument("Linear: feature dimension mismatch");
  }
  input_ = x;
  const int n = x.shape(0), out = weight.shape(0), in = weight.shape(1);
  Tensor y({n, out});
  gemm(false, true, n, out, in, 1.0, x.data(), weight.data(), 0.0, y.data());
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out; ++o) y.at(i, o) += bias[static_cast<std::size_t>(o)];
  return y;
}

Tensor Linear::backward(const Tensor& grad_y) {
  const int n = input_.shape(0), out = weight.shape(0), in = weight.shape(1);
  gemm(true, false, out, in, n, 1.0, grad_y.data(), input_.data(), 1.0,
       grad_weight.data());
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out; ++o) grad_bias[static_cast<std::size_t>(o)] += grad_y.at(i, o);
  Tensor gx({n, in});
  gemm(false, false, n, in, out, 1.0, grad_y.data(), weight.data(), 0.0, gx.data());
  return gx;
}

// ------------------------------------------------------------------- GAP

Tensor gap(const Tensor& features) {
  const int n = features.shape(0), c = features.shape(1);
  const int hw = features.shape(2) * features.shape(3);
  Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = features.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      double sum = 0.0;
      for (int k = 0; k < hw; ++k) sum += p[k];
      out.at(i, ch) = sum / hw;
    }
  }
  return out;
}

Tensor gap_backward(const Tensor& grad_pooled, int height, int width) {
  const int n = grad_pooled.shape(0), c = grad_pooled.shape(1);
  const int hw = height * width;
  Tensor gx({n, c, height, width});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double g = grad_pooled.at(i, ch) / hw;
      double* p = gx.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int k = 0; k < hw; ++k) p[k] = g;
    }
  }
  return gx;
}

// ----------------------------------------------------- ReferenceBackbone

ReferenceBackbone::ReferenceBackbone(const BackboneConfig& config)
    : config_(config) {
  if (config_.channels.empty()) {
    throw ConfigError("backbone channel plan must not be empty");
  }
  const int blocks = static_cast<int>(config_.channels.size());
  int size = config_.input_size;
  for (int b = 0; b < blocks; ++b) {
    if (size % 2 != 0) {
      throw ConfigError("unsupported input size " +
                        std::to_string(config_.input_size) +
                        ": not divisible by 2^" + std::to_string(blocks));
    }
    size /= 2;
  }
  if (size < 2) {
    throw ConfigError("unsupported input size " + std::to_string(config_.input_size) +
                      ": feature maps would be " + std::to_string(size) +
                      "x" + std::to_string(size) + " (need >= 2)");
  }
  int in_ch = config_.in_channels;
  for (int out_ch : config_.channels) {
    convs_.emplace_back(in_ch, out_ch);
    norms_.emplace_back(out_ch);
    relus_.emplace_back();
    pools_.emplace_back();
    in_ch = out_ch;
  }
}

int ReferenceBackbone::feature_size() const {
  return config_.input_size >> static_cast<int>(config_.channels.size());
}

void ReferenceBackbone::init(Rng& rng) {
  for (auto& conv : convs_) conv.init(rng);
}

Tensor ReferenceBackbone::forward(const Tensor& images, bool training) {
  if (images.shape(1) != config_.in_channels ||
      images.shape(2) != config_.input_size ||
      images.shape(3) != config_.input_size) {
    throw std::invalid_argument("backbone: unexpected input shape");
  }
  Tensor x = images;
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    x = convs_[b].forward(x);
    x = norms_[b].forward(x, training);
    x = relus_[b].forward(x);
    x = pools_[b].forward(x);
  }
  return x;
}

Tensor ReferenceBackbone::backward(const Tensor& grad_features) {
  Tensor g = grad_features;
  for (std::size_t b = convs_.size(); b-- > 0;) {
    g = pools_[b].backward(g);
    g = relus_[b].backward(g);
    g = norms_[b].backward(g);
    g = convs_[b].backward(g);
  }
  return g;
}

void ReferenceBackbone::collect_state(std::vector<Param>* params,
                                      std::vector<Param>* buffers) {
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b);
    if (params) {
      params->push_back({prefix + ".conv.weight", &convs_[b].weight,
                         &convs_[b].grad_weight});
      params->push_back({prefix + ".bn.gamma", &norms_[b].gamma,
                         &norms_[b].grad_gamma});
      params->push_back({prefix + ".bn.beta", &norms_[b].beta,
                         &norms_[b].grad_beta});
    }
    if (buffers) {
      buffers->push_back({prefix + ".bn.running_mean", &norms_[b].running_mean,
                          nullptr});
      buffers->push_back({prefix + ".bn.running_var", &norms_[b].running_var,
                          nullptr});
    }
  }
}

// ----------------------------------------------------------------- Model

Model::Model(const ModelConfig& config)
    : config_(config),
      backbone_(config.backbone),
      fc_(config.backbone.channels.back(), config.num_classes) {
  if (config_.num_classes < 2) throw ConfigError("model needs >= 2 classes");
  feat_h_ = feat_w_ = backbone_.feature_size();
}

void Model::init_params(std::uint64_t seed) {
  Rng rng(seed);
  backbone_.init(rng);
  fc_.init(rng);
}

Tensor Model::forward_features(const Tensor& images, bool training) {
  return backbone_.forward(images, training);
}

Tensor Model::forward_logits(const Tensor& features) {
  return fc_.forward(gap(features));
}

void Model::backward(const Tensor& grad_logits, const Tensor* grad_features_extra) {
  Tensor grad_pooled = fc_.backward(grad_logits);
  Tensor grad_features = gap_backward(grad_pooled, feat_h_, feat_w_);
  if (grad_features_extra) grad_features += *grad_features_extra;
  backbone_.backward(grad_features);
}

std::vector<Param> Model::params() {
  std::vector<Param> out;
  backbone_.collect_state(&out, nullptr);
  out.push_back({"fc.weight", &fc_.weight, &fc_.grad_weight});
  out.push_back({"fc.bias", &fc_.bias, &fc_.grad_bias});
  return out;
}

std::vector<Param> Model::buffers() {
  std::vector<Param> out;
  backbone_.collect_state(nullptr, &out);
  return out;
}

void Model::zero_grads() {
  for (auto& p : params()) p.grad->zero();
}

long Model::param_count() {
  long total = 0;
  for (auto& p : params()) total += static_cast<long>(p.value->size());
  return total;
}

// ------------------------------------------------------------ dual views

Tensor batch_slice(const Tensor& t, int from, int to) {
  std::vector<int> shape = t.shape();
  shape[0] = to - from;
  Tensor out(shape);
  const std::size_t per = t.size() / static_cast<std::size_t>(t.shape(0));
  std::memcpy(out.data(), t.data() + static_cast<std::size_t>(from) * per,
              sizeof(double) * per * static_cast<std::size_t>(to - from));
  return out;
}

Tensor batch_concat(const Tensor& a, const Tensor& b) {
  std::vector<int> shape = a.shape();
  shape[0] = a.shape(0) + b.shape(0);
  Tensor out(shape);
  std::memcpy(out.data(), a.data(), sizeof(double) * a.size());
  std::memcpy(out.data() + a.size(), b.data(), sizeof(double) * b.size());
  return out;
}

DualViewOutputs forward_two_views(Model& model, const Tensor& view1,
                                  const Tensor& view2, bool training) {
  const int n = view1.shape(0);
  const Tensor stacked = batch_concat(view1, view2);
  const Tensor features = model.forward_features(stacked, training);
  const Tensor logits = model.forward_logits(features);

  DualViewOutputs out;
  out.features = batch_slice(features, 0, n);
  out.features_flipped = batch_slice(features, n, 2 * n);
  out.logits = batch_slice(logits, 0, n);
  out.logits_flipped = batch_slice(logits, n, 2 * n);
  out.maps = compute_cam(out.features, model.fc().weight);
  out.maps_flipped = compute_cam(out.features_flipped, model.fc().weight);
  return out;
}

DualViewOutputs forward_dual(Model& model, const Tensor& images, bool training) {
  return forward_two_views(model, images, flip_w(images), training);
}

// ----------------------------------------------------------------- AdamW

AdamW::AdamW(std::vector<Param> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].value->size(), 0.0);
    v_[i].assign(params_[i].value->size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& value = *params_[i].value;
    const Tensor& grad = *params_[i].grad;
    for (std::size_t k = 0; k < value.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * grad[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * grad[k] * grad[k];
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      value[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * value[k]);
    }
  }
}

}  // namespace rbfer
