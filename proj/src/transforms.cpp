#include "rbfer/transforms.hpp"

#include <cmath>
#include <string>

#include "rbfer/attention.hpp"
#include "rbfer/errors.hpp"

namespace rbfer {

TransformKind transform_from_string(const std::string& name) {
  if (name == "flip") return TransformKind::kFlip;
  if (name == "scaling") return TransformKind::kScaling;
  if (name == "intensity") return TransformKind::kIntensity;
  throw ConfigError("unknown transform '" + name +
                    "' (expected flip, scaling or intensity)");
}

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::kFlip:
      return "flip";
    case TransformKind::kScaling:
      return "scaling";
    default:
      return "intensity";
  }
}

ViewTransform draw_view_transform(TransformKind kind, Rng& rng) {
  ViewTransform t;
  t.kind = kind;
  switch (kind) {
    case TransformKind::kFlip:
      t.param = 1.0;
      break;
    case TransformKind::kScaling:
      t.param = rng.uniform(0.75, 1.25);
      break;
    case TransformKind::kIntensity:
      t.param = rng.uniform(0.7, 1.3);
      break;
  }
  return t;
}

namespace {

void check_scale(double s, int h, int w) {
  if (!(s > 0.0)) throw ConfigError("scale factor must be positive");
  if (std::lround(h * s) < 2 || std::lround(w * s) < 2) {
    throw ConfigError("scale " + std::to_string(s) +
                      " produces spatial dims < 2");
  }
}

double bilinear_at(const double* plane, int h, int w, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    const int yy = y0 + dy;
    if (yy < 0 || yy >= h) continue;
    const double wy = dy ? fy : 1.0 - fy;
    for (int dx = 0; dx < 2; ++dx) {
      const int xx = x0 + dx;
      if (xx < 0 || xx >= w) continue;
      const double wgt = wy * (dx ? fx : 1.0 - fx);
      if (wgt != 0.0) acc += wgt * plane[yy * w + xx];
    }
  }
  return acc;
}

void bilinear_scatter(double* plane, int h, int w, double y, double x, double g) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  for (int dy = 0; dy < 2; ++dy) {
    const int yy = y0 + dy;
    if (yy < 0 || yy >= h) continue;
    const double wy = dy ? fy : 1.0 - fy;
    for (int dx = 0; dx < 2; ++dx) {
      const int xx = x0 + dx;
      if (xx < 0 || xx >= w) continue;
      const double wgt = wy * (dx ? fx : 1.0 - fx);
      if (wgt != 0.0) plane[yy * w + xx] += wgt * g;
    }
  }
}

// Resamples every plane: out(y, x) = in(cy + (y - cy) * rate, ...).
Tensor resample_about_center(const Tensor& t, double rate) {
  const int n = t.shape(0), c = t.shape(1), h = t.shape(2), w = t.shape(3);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor out({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = t.data() + (static_cast<std::size_t>(i) * c + ch) *
                                         static_cast<std::size_t>(h) * w;
      double* dst = out.data() + (static_cast<std::size_t>(i) * c + ch) *
                                     static_cast<std::size_t>(h) * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          dst[y * w + x] =
              bilinear_at(src, h, w, cy + (y - cy) * rate, cx + (x - cx) * rate);
        }
      }
    }
  }
  return out;
}

Tensor resample_adjoint(const Tensor& grad_out, double rate) {
  const int n = grad_out.shape(0), c = grad_out.shape(1);
  const int h = grad_out.shape(2), w = grad_out.shape(3);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor gx({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = grad_out.data() +
                          (static_cast<std::size_t>(i) * c + ch) *
                              static_cast<std::size_t>(h) * w;
      double* dst = gx.data() + (static_cast<std::size_t>(i) * c + ch) *
                                    static_cast<std::size_t>(h) * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          bilinear_scatter(dst, h, w, cy + (y - cy) * rate, cx + (x - cx) * rate,
                           src[y * w + x]);
        }
      }
    }
  }
  return gx;
}

}  // namespace

Tensor transform_images(const Tensor& images, const ViewTransform& t) {
  switch (t.kind) {
    case TransformKind::kFlip:
      return flip_w(images);
    case TransformKind::kScaling: {
      check_scale(t.param, images.shape(2), images.shape(3));
      // View content is scaled UP by param; sampling rate is its inverse.
      return resample_about_center(images, 1.0 / t.param);
    }
    case TransformKind::kIntensity: {
      if (!(t.param > 0.0)) throw ConfigError("intensity gain must be positive");
      Tensor out = images;
      out *= t.param;
      return out;
    }
  }
  throw ConfigError("unknown transform kind");
}

Tensor align_attention(const Tensor& maps, const ViewTransform& t) {
  switch (t.kind) {
    case TransformKind::kFlip:
      return flip_w(maps);
    case TransformKind::kScaling:
      check_scale(t.param, maps.shape(2), maps.shape(3));
      return resample_about_center(maps, t.param);
    case TransformKind::kIntensity:
      return maps;
  }
  throw ConfigError("unknown transform kind");
}

Tensor align_attention_adjoint(const Tensor& grad_aligned,
                               const ViewTransform& t) {
  switch (t.kind) {
    case TransformKind::kFlip:
      return flip_w(grad_aligned);
    case TransformKind::kScaling:
      return resample_adjoint(grad_aligned, t.param);
    case TransformKind::kIntensity:
      return grad_aligned;
  }
  throw ConfigError("unknown transform kind");
}

TransformResult apply_transform(const Tensor& images, TransformKind kind,
                                double param) {
  ViewTransform t{kind, param};
  TransformResult res;
  res.images = transform_images(images, t);
  res.inverse = t;
  return res;
}

}  // namespace rbfer
