#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cloak/diffusion.hpp"
#include "cloak/tensor.hpp"

namespace cloak {

// Kernel-size-derived blur width, the usual convention when only the kernel
// size is given.
inline double derived_gaussian_sigma(int k) { return 0.3 * ((k - 1) / 2.0 - 1.0) + 0.8; }

inline Tensor gaussian_kernel(int k, double sigma) {
  if (k < 1 || k % 2 == 0) throw ConfigError("gaussian_kernel: size must be odd");
  if (sigma <= 0.0) throw ConfigError("gaussian_kernel: sigma must be positive");
  std::vector<double> v(static_cast<std::size_t>(k) * k);
  const int half = k / 2;
  double total = 0.0;
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) {
      const double dy = y - half, dx = x - half;
      const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      v[static_cast<std::size_t>(y * k + x)] = e;
      total += e;
    }
  for (double& e : v) e /= total;
  return Tensor::from_data({k, k}, std::move(v));
}

struct GaussianSpec {
  bool enabled = false;
  int kernel_size = 7;
  double sigma = 0.0;  // <= 0 means derived from kernel_size
};

// The distribution T of data transformations: gaussian filter, horizontal
// flip, center crop, resize, composed in that fixed order.
struct TransformSpec {
  GaussianSpec gaussian;
  double hflip_p = 0.0;
  double crop_fraction = 1.0;  // in (0, 1]
  int resize_h = 0, resize_w = 0;  // 0 means keep the cropped size

  static TransformSpec identity() { return TransformSpec{}; }

  // The usual victim preprocessing pipeline at a given working resolution.
  static TransformSpec standard(int resolution) {
    TransformSpec t;
    t.gaussian.enabled = true;
    t.gaussian.kernel_size = 7;
    t.hflip_p = 0.5;
    t.crop_fraction = 0.9;
    t.resize_h = t.resize_w = resolution;
    return t;
  }

  bool is_identity() const {
    return !gaussian.enabled && hflip_p <= 0.0 && crop_fraction >= 1.0 &&
           resize_h == 0 && resize_w == 0;
  }

  void validate() const {
    if (gaussian.enabled && (gaussian.kernel_size < 1 || gaussian.kernel_size % 2 == 0))
      throw ConfigError("TransformSpec: gaussian kernel size must be odd");
    if (hflip_p < 0.0 || hflip_p > 1.0)
      throw ConfigError("TransformSpec: hflip_p must be in [0,1]");
    if (crop_fraction <= 0.0 || crop_fraction > 1.0)
      throw ConfigError("TransformSpec: crop_fraction must be in (0,1]");
    if (resize_h < 0 || resize_w < 0) throw ConfigError("TransformSpec: bad resize");
  }
};

// One realized draw g ~ T: every choice frozen, so apply() is deterministic
// and differentiable end to end.
struct SampledTransform {
  bool apply_gaussian = false;
  Tensor kernel;  // [k,k], set when apply_gaussian
  bool flip = false;
  int crop_y0 = 0, crop_x0 = 0, crop_h = 0, crop_w = 0;
  int out_h = 0, out_w = 0;

  // Compact replay token for run manifests.
  std::string describe() const {
    return "g" + std::to_string(apply_gaussian ? kernel.dim(0) : 0) +
           "f" + std::to_string(flip ? 1 : 0) + "c" + std::to_string(crop_h) + "@" +
           std::to_string(crop_y0) + "," + std::to_string(crop_x0) + "r" +
           std::to_string(out_h) + "x" + std::to_string(out_w);
  }

  Tensor apply(const Tensor& x) const {
    Tensor y = x;
    if (apply_gaussian) y = depthwise_filter2d(y, kernel);
    if (flip) y = hflip(y);
    if (crop_h != y.dim(1) || crop_w != y.dim(2))
      y = crop(y, crop_y0, crop_x0, crop_h, crop_w);
    if (out_h != y.dim(1) || out_w != y.dim(2)) y = resize_bilinear(y, out_h, out_w);
    return y;
  }
};

// Draw a transform for h-by-w inputs. Only a non-degenerate flip probability
// consumes randomness, so an identity spec leaves the stream untouched.
inline SampledTransform sample_transform(const TransformSpec& spec, int h, int w,
                                         RandomStream& rng) {
  spec.validate();
  SampledTransform g;
  if (spec.gaussian.enabled) {
    g.apply_gaussian = true;
    const double sigma = spec.gaussian.sigma > 0.0
                             ? spec.gaussian.sigma
                             : derived_gaussian_sigma(spec.gaussian.kernel_size);
    g.kernel = gaussian_kernel(spec.gaussian.kernel_size, sigma);
  }
  g.flip = rng.bernoulli(spec.hflip_p);
  const int side = std::max(1, static_cast<int>(spec.crop_fraction * std::min(h, w)));
  g.crop_h = g.crop_w = side;
  g.crop_y0 = (h - side) / 2;
  g.crop_x0 = (w - side) / 2;
  g.out_h = spec.resize_h > 0 ? spec.resize_h : side;
  g.out_w = spec.resize_w > 0 ? spec.resize_w : side;
  return g;
}

// Apply one freshly drawn transform per image (the lower-level training
// distribution); returns a graph-carrying batch.
inline ImageBatch transform_batch_per_image(const ImageBatch& x, const TransformSpec& spec,
                                            RandomStream& rng) {
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(x.count()));
  for (int i = 0; i < x.count(); ++i) {
    SampledTransform g = sample_transform(spec, x.height(), x.width(), rng);
    parts.push_back(g.apply(x.image(i)));
  }
  return ImageBatch::wrap(stack_outer(parts), x.cond_ids);
}

// Apply a single realized transform to every image (the crafting-side
// g(X_p) = {g(x_p)} convention).
inline ImageBatch transform_batch_shared(const ImageBatch& x, const SampledTransform& g) {
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(x.count()));
  for (int i = 0; i < x.count(); ++i) parts.push_back(g.apply(x.image(i)));
  return ImageBatch::wrap(stack_outer(parts), x.cond_ids);
}

struct EotEstimate {
  double loss_mean = 0.0;
  std::vector<double> grad;  // d(mean loss)/d(X_p pixels)
};

// Monte Carlo estimate of E_g[f(g(X_p))] with J draws, one shared transform
// per draw. Gradients are averaged over draws before any sign is taken.
inline EotEstimate eot_estimate(const std::function<Tensor(const ImageBatch&)>& f,
                                const ImageBatch& x, const TransformSpec& spec, int J,
                                RandomStream& rng,
                                std::vector<SampledTransform>* drawn = nullptr) {
  if (J < 1) throw ConfigError("eot_estimate: J must be >= 1");
  Tensor leaf = x.images.clone(true);
  const ImageBatch base = ImageBatch::wrap(leaf, x.cond_ids);
  double acc = 0.0;
  for (int j = 0; j < J; ++j) {
    SampledTransform g = sample_transform(spec, x.height(), x.width(), rng);
    if (drawn) drawn->push_back(g);
    ImageBatch transformed = transform_batch_shared(base, g);
    Tensor loss = f(transformed);
    acc += loss.item();
    backward(scale(loss, 1.0 / J));
  }
  EotEstimate out;
  out.loss_mean = acc / J;
  out.grad = leaf.has_grad() ? leaf.grad() : std::vector<double>(static_cast<std::size_t>(leaf.size()), 0.0);
  return out;
}

}  // namespace cloak
