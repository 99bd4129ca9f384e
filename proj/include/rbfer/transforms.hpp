#pragma once

#include <string>

#include "rbfer/rng.hpp"
#include "rbfer/tensor.hpp"

namespace rbfer {

enum class TransformKind { kFlip, kScaling, kIntensity };

TransformKind transform_from_string(const std::string& name);
std::string to_string(TransformKind kind);

/// A drawn second-view transform. `param` is the scale factor for kScaling,
/// the pixel gain for kIntensity, and unused (1.0) for kFlip. The same
/// record describes the inverse map that aligns the second view's attention
/// maps with the first view's frame.
struct ViewTransform {
  TransformKind kind = TransformKind::kFlip;
  double param = 1.0;
};

/// Scale in [0.75, 1.25], gain in [0.7, 1.3]; flip consumes no randomness.
ViewTransform draw_view_transform(TransformKind kind, Rng& rng);

/// Applies the transform to N x C x H x W images. Scaling resizes content
/// about the image center with bilinear interpolation on a fixed canvas.
Tensor transform_images(const Tensor& images, const ViewTransform& t);

/// Maps the second view's attention maps back into the first view's frame:
/// flip reverses width, scaling bilinearly resamples by the inverse factor,
/// intensity is the identity.
Tensor align_attention(const Tensor& maps, const ViewTransform& t);

/// Exact adjoint of align_attention, for backpropagation.
Tensor align_attention_adjoint(const Tensor& grad_aligned, const ViewTransform& t);

struct TransformResult {
  Tensor images;
  ViewTransform inverse;
};

TransformResult apply_transform(const Tensor& images, TransformKind kind,
                                double param);

}  // namespace rbfer
