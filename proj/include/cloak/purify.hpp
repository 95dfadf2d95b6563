#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cloak/jpeg.hpp"
#include "cloak/tensor.hpp"

namespace cloak {

inline double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  const double m = acc / static_cast<double>(a.size());
  if (m == 0.0) return INFINITY;
  return 10.0 * std::log10(1.0 / m);
}

// ---------------------------------------------------------------------------
// Total-variation reconstruction

struct TvmConfig {
  double dropout_p = 0.02;
  double lambda_tv = 0.5;
  int max_iters = 200;
  int work_resolution = 32;

  void validate() const {
    if (dropout_p < 0.0 || dropout_p >= 1.0)
      throw ConfigError("TvmConfig: dropout_p must be in [0,1)");
    if (lambda_tv < 0.0) throw ConfigError("TvmConfig: lambda_tv must be >= 0");
    if (max_iters < 1 || work_resolution < 2) throw ConfigError("TvmConfig: bad sizes");
  }
};

struct TvmResult {
  Tensor image;                        // purified, original resolution
  std::vector<double> objective_trace; // objective at start plus each accepted step
  bool converged = false;              // false: hit max_iters, best-so-far returned
};

namespace detail {

constexpr double kTvEps = 1e-8;

// Isotropic total variation over the forward-difference interior.
inline Tensor tv2(const Tensor& z) {
  const int h = z.dim(1), w = z.dim(2);
  Tensor dh = sub(crop(z, 0, 1, h - 1, w - 1), crop(z, 0, 0, h - 1, w - 1));
  Tensor dv = sub(crop(z, 1, 0, h - 1, w - 1), crop(z, 0, 0, h - 1, w - 1));
  Tensor mag = sqrt_ew(add(add(square(dh), square(dv)), Tensor::scalar(kTvEps * kTvEps)));
  return sum(mag);
}

}  // namespace detail

inline double tv2_value(const Tensor& image) {
  NoGradGuard ng;
  return detail::tv2(image).item();
}

// Masked-fidelity + total-variation reconstruction: drop a random pixel
// mask, then descend  ||(1-X) .* (Z - x)||^2 + lambda * TV2(Z)  from Z = x
// with backtracking line search. Objective values over accepted steps are
// non-increasing by construction.
inline TvmResult tvm_purify(const Tensor& x, const TvmConfig& cfg, RandomStream& rng) {
  cfg.validate();
  if (x.rank() != 3) throw ShapeError("tvm_purify: expects [c,h,w]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);

  // (1) work at reduced resolution when asked
  const int wh = std::min(cfg.work_resolution, h), ww = std::min(cfg.work_resolution, w);
  Tensor base;
  {
    NoGradGuard ng;
    base = (wh == h && ww == w) ? x.detach() : resize_bilinear(x, wh, ww);
  }

  // (2) Bernoulli dropout mask; weight = 1 - X
  std::vector<double> weight(static_cast<std::size_t>(base.size()));
  for (double& v : weight) v = rng.bernoulli(cfg.dropout_p) ? 0.0 : 1.0;
  Tensor wmask = Tensor::from_data(base.shape(), std::move(weight));

  auto objective = [&](const Tensor& z) {
    Tensor fid = sum(square(mul(wmask, sub(z, base))));
    if (cfg.lambda_tv == 0.0) return fid;
    return add(fid, scale(detail::tv2(z), cfg.lambda_tv));
  };

  // (3) gradient descent with backtracking from Z = x
  Tensor z = base.clone(false);
  double prev = [&] {
    NoGradGuard ng;
    return objective(z).item();
  }();
  TvmResult result;
  result.objective_trace.push_back(prev);

  double step = 0.1;
  bool stalled = false;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    Tensor leaf = z.clone(true);
    Tensor obj = objective(leaf);
    backward(obj);
    const std::vector<double>& g = leaf.grad();
    double gnorm2 = 0.0;
    for (double v : g) gnorm2 += v * v;
    if (gnorm2 <= 1e-18) {
      result.converged = true;
      break;
    }

    bool accepted = false;
    step *= 2.0;  // allow regrowth after cautious iterations
    while (step > 1e-14) {
      Tensor cand = z.clone(false);
      for (std::int64_t i = 0; i < cand.size(); ++i)
        cand.data()[i] -= step * g[static_cast<std::size_t>(i)];
      double val;
      {
        NoGradGuard ng;
        val = objective(cand).item();
      }
      if (val <= prev - 1e-4 * step * gnorm2) {
        z = cand;
        const double drop = prev - val;
        prev = val;
        result.objective_trace.push_back(val);
        accepted = true;
        if (drop <= 1e-10 * (std::abs(val) + 1.0)) {
          result.converged = true;
          iter = cfg.max_iters;  // relative progress exhausted
        }
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      stalled = true;
      break;
    }
  }
  if (stalled) result.converged = true;  // no descent direction left

  // (4) clamp
  for (double& v : z.values()) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);

  // (5) back to the original resolution in two bilinear stages
  NoGradGuard ng;
  if (wh == h && ww == w) {
    result.image = z;
  } else {
    const int mh = std::min(h, wh * 2), mw = std::min(w, ww * 2);
    Tensor mid = resize_bilinear(z, mh, mw);
    result.image = resize_bilinear(mid, h, w);
  }
  (void)c;
  return result;
}

// ---------------------------------------------------------------------------
// JPEG re-encoding defense

inline Tensor jpeg_purify(const Tensor& x, int quality) { return jpeg_roundtrip(x, quality); }

// ---------------------------------------------------------------------------
// Super-resolution proxy: bilinear downscale by 1/scale then upscale back.
// Acts as the low-pass reconstruction stage of an SR pipeline.

inline Tensor sr_purify(const Tensor& x, int scale) {
  if (x.rank() != 3) throw ShapeError("sr_purify: expects [c,h,w]");
  if (scale < 2) throw ConfigError("sr_purify: scale must be >= 2");
  const int h = x.dim(1), w = x.dim(2);
  if (h % scale != 0 || w % scale != 0)
    throw ConfigError("sr_purify: image side not divisible by scale " + std::to_string(scale));
  NoGradGuard ng;
  Tensor down = resize_bilinear(x, h / scale, w / scale);
  return resize_bilinear(down, h, w);
}

}  // namespace cloak
