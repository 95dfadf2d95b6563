#pragma once

#include <vector>

#include "cloak/denoiser.hpp"
#include "cloak/schedule.hpp"
#include "cloak/tensor.hpp"

namespace cloak {

// A batch of [0,1] images with a conditioning id per image. The pixel range
// is validated on construction; tiny float dust is snapped back into range.
struct ImageBatch {
  Tensor images;              // [n, c, h, w]
  std::vector<int> cond_ids;  // size n

  ImageBatch() = default;

  ImageBatch(Tensor imgs, std::vector<int> ids) : images(std::move(imgs)), cond_ids(std::move(ids)) {
    if (images.rank() != 4)
      throw ShapeError("ImageBatch: expects [n,c,h,w], got " + shape_str(images.shape()));
    if (static_cast<int>(cond_ids.size()) != images.dim(0))
      throw ShapeError("ImageBatch: cond_ids size mismatch");
    enforce_range();
  }

  static ImageBatch uniform_cond(Tensor imgs, int cond_id) {
    std::vector<int> ids(static_cast<std::size_t>(imgs.dim(0)), cond_id);
    return ImageBatch(std::move(imgs), std::move(ids));
  }

  // Wrap a graph-carrying tensor without range validation (which would
  // mutate values and sever gradients). For internal loss plumbing.
  static ImageBatch wrap(Tensor imgs, std::vector<int> ids) {
    ImageBatch b;
    b.images = std::move(imgs);
    b.cond_ids = std::move(ids);
    return b;
  }

  int count() const { return images.dim(0); }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }

  // Differentiable per-image view; grads flow back into `images`.
  Tensor image(int i) const { return select_outer(images, i); }

  ImageBatch clone() const { return ImageBatch(images.clone(false), cond_ids); }

  // Subset by index, preserving order. Plain value copy (no graph).
  ImageBatch subset(const std::vector<int>& idx) const {
    const std::int64_t stride = images.size() / images.dim(0);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(stride) * idx.size());
    std::vector<int> ids;
    for (int i : idx) {
      const double* src = images.data() + i * stride;
      out.insert(out.end(), src, src + stride);
      ids.push_back(cond_ids[static_cast<std::size_t>(i)]);
    }
    Shape s = images.shape();
    s[0] = static_cast<int>(idx.size());
    return ImageBatch(Tensor::from_data(std::move(s), std::move(out)), std::move(ids));
  }

 private:
  void enforce_range() {
    for (double& v : images.values()) {
      if (v < -1e-9 || v > 1.0 + 1e-9)
        throw ConfigError("ImageBatch: pixel value " + std::to_string(v) +
                          " outside [0,1]");
      if (v < 0.0) v = 0.0;
      if (v > 1.0) v = 1.0;
    }
  }
};

// z_t = alpha_t * x + sigma_t * eps. Works on a single [c,h,w] image or a
// whole [n,c,h,w] batch (one shared t).
inline Tensor add_noise(const Tensor& x, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.t_steps)
    throw ConfigError("add_noise: t out of range");
  if (eps.shape() != x.shape())
    throw ShapeError("add_noise: eps shape " + shape_str(eps.shape()) +
                     " != x shape " + shape_str(x.shape()));
  const double a = sched.alpha[static_cast<std::size_t>(t)];
  const double s = sched.sigma[static_cast<std::size_t>(t)];
  return add(scale(x, a), scale(eps, s));
}

// Single-sample Monte Carlo estimate of the denoising loss: one (t, eps)
// draw per image, squared error averaged over pixels, then over the batch.
// Draw order per image: t first, then the noise field. cond_override >= 0
// replaces every image's conditioning id. Model is any type exposing
// forward(z, t, cond_id) -> Tensor.
template <class Model>
Tensor denoise_loss(const ImageBatch& x, const Model& model,
                    const NoiseSchedule& sched, RandomStream& rng,
                    int cond_override = -1) {
  const int n = x.count();
  if (n == 0) throw ConfigError("denoise_loss: empty batch");
  const Shape img_shape{x.channels(), x.height(), x.width()};
  Tensor total = Tensor::scalar(0.0);
  for (int i = 0; i < n; ++i) {
    const int t = rng.uniform_int(sched.t_steps);
    Tensor eps = Tensor::randn(img_shape, rng);
    Tensor img = x.image(i);
    Tensor z = add_noise(img, t, eps, sched);
    const int cond = cond_override >= 0 ? cond_override : x.cond_ids[static_cast<std::size_t>(i)];
    Tensor pred = model.forward(z, t, cond);
    Tensor li = scale(mse(pred, img), sched.weight[static_cast<std::size_t>(t)]);
    total = add(total, li);
  }
  return scale(total, 1.0 / n);
}

// Ancestral sampling: start from pure noise, predict the clean image,
// re-noise at the next (smaller) timestep, repeat; clamp the result.
inline ImageBatch sample(const DenoiserModel& model, int cond_id,
                         const NoiseSchedule& sched, int steps, int count,
                         RandomStream& rng) {
  if (steps < 1 || steps > sched.t_steps)
    throw ConfigError("sample: steps must be in [1, t_steps]");
  NoGradGuard ng;
  const int res = model.arch().resolution;
  const Shape img_shape{model.arch().in_channels, res, res};

  std::vector<int> ts(static_cast<std::size_t>(steps));
  if (steps == 1) {
    ts[0] = sched.t_steps - 1;
  } else {
    for (int j = 0; j < steps; ++j)
      ts[static_cast<std::size_t>(j)] =
          static_cast<int>(static_cast<std::int64_t>(steps - 1 - j) * (sched.t_steps - 1) / (steps - 1));
  }

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count) * static_cast<std::size_t>(numel(img_shape)));
  for (int i = 0; i < count; ++i) {
    Tensor z = Tensor::randn(img_shape, rng);
    Tensor xhat;
    for (int j = 0; j < steps; ++j) {
      xhat = model.forward(z, ts[static_cast<std::size_t>(j)], cond_id);
      if (j + 1 < steps) {
        Tensor eps = Tensor::randn(img_shape, rng);
        z = add_noise(xhat, ts[static_cast<std::size_t>(j + 1)], eps, sched);
      }
    }
    for (double v : xhat.values()) out.push_back(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
  }
  Shape batch_shape{count, img_shape[0], img_shape[1], img_shape[2]};
  return ImageBatch::uniform_cond(Tensor::from_data(std::move(batch_shape), std::move(out)),
                                  cond_id);
}

}  // namespace cloak
