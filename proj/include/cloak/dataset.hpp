#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "cloak/diffusion.hpp"
#include "cloak/png_io.hpp"
#include "cloak/transforms.hpp"

namespace cloak {

// One subject's images, split into the set to be poisoned and a clean
// held-out reference set.
struct InstanceDataset {
  ImageBatch protect_set;
  ImageBatch reference_set;
  std::string instance_id;
};

namespace detail {

inline InstanceDataset split_instance(const ImageBatch& all, const std::string& id,
                                      std::uint64_t seed) {
  const int n = all.count();
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  RandomStream rng(seed ^ 0x5eedULL);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  const int n_protect = n / 2;
  InstanceDataset ds;
  ds.instance_id = id;
  ds.protect_set = all.subset({order.begin(), order.begin() + n_protect});
  ds.reference_set = all.subset({order.begin() + n_protect, order.end()});
  return ds;
}

}  // namespace detail

// Load every .png in a directory (sorted by name), resize to the working
// resolution, and split deterministically.
inline InstanceDataset ingest(const std::string& dir_path, int working_resolution,
                              std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir_path)) throw IoError("ingest: not a directory: " + dir_path);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir_path))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.size() < 2)
    throw IoError("ingest: need at least 2 decodable PNG images in " + dir_path);

  std::vector<Tensor> imgs;
  imgs.reserve(files.size());
  NoGradGuard ng;
  for (const std::string& f : files) {
    Tensor img = read_png(f);  // throws IoError naming the file when undecodable
    if (img.dim(1) != working_resolution || img.dim(2) != working_resolution)
      img = resize_bilinear(img, working_resolution, working_resolution);
    imgs.push_back(img);
  }
  ImageBatch all = ImageBatch::uniform_cond(stack_outer(imgs), kCondInstance);
  return detail::split_instance(all, fs::path(dir_path).filename().string(), seed);
}

// ---------------------------------------------------------------------------
// Procedural datasets: a per-instance signature pattern plus per-image
// jitter, so identity is learnable without any face data.

enum class SynthKind { blobs, stripes, glyphs };

inline SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "blobs") return SynthKind::blobs;
  if (s == "stripes") return SynthKind::stripes;
  if (s == "glyphs") return SynthKind::glyphs;
  throw ConfigError("unknown synthetic dataset kind: " + s);
}

namespace detail {

struct BlobSignature {
  struct Blob {
    double cy, cx, radius;
    double color[3];
  };
  std::vector<Blob> blobs;
  double bg[3];
};

inline Tensor render_synth_image(SynthKind kind, int res, RandomStream& sig_rng_copy,
                                 RandomStream& jitter_rng) {
  std::vector<double> v(static_cast<std::size_t>(3) * res * res, 0.0);
  auto px = [&](int c, int y, int x) -> double& {
    return v[(static_cast<std::size_t>(c) * res + y) * res + x];
  };

  switch (kind) {
    case SynthKind::blobs: {
      double bg[3] = {sig_rng_copy.uniform(0.05, 0.25), sig_rng_copy.uniform(0.05, 0.25),
                      sig_rng_copy.uniform(0.05, 0.25)};
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < res; ++y)
          for (int x = 0; x < res; ++x) px(c, y, x) = bg[c];
      const int n_blobs = 3;
      for (int bIdx = 0; bIdx < n_blobs; ++bIdx) {
        const double cy = sig_rng_copy.uniform(0.2, 0.8) * res;
        const double cx = sig_rng_copy.uniform(0.2, 0.8) * res;
        const double rad = sig_rng_copy.uniform(0.10, 0.18) * res;
        double col[3] = {sig_rng_copy.uniform(0.4, 0.95), sig_rng_copy.uniform(0.4, 0.95),
                         sig_rng_copy.uniform(0.4, 0.95)};
        const double jy = cy + jitter_rng.uniform(-2.0, 2.0);
        const double jx = cx + jitter_rng.uniform(-2.0, 2.0);
        const double gain = 1.0 + jitter_rng.uniform(-0.08, 0.08);
        for (int y = 0; y < res; ++y)
          for (int x = 0; x < res; ++x) {
            const double d2 = (y - jy) * (y - jy) + (x - jx) * (x - jx);
            const double a = std::exp(-d2 / (2.0 * rad * rad));
            for (int c = 0; c < 3; ++c)
              px(c, y, x) += a * gain * (col[c] - px(c, y, x));
          }
      }
      // fine-grained identity cue: a per-instance grating whose phase
      // jitters slightly between shots
      {
        const double period = sig_rng_copy.uniform(4.5, 6.5);
        const double theta = sig_rng_copy.uniform(0.0, M_PI);
        const double phase0 = sig_rng_copy.uniform(0.0, 2.0 * M_PI);
        const double amp = sig_rng_copy.uniform(0.08, 0.12);
        const double phase = phase0 + jitter_rng.uniform(-0.6, 0.6);
        const double cx = std::cos(theta), sy = std::sin(theta);
        for (int y = 0; y < res; ++y)
          for (int x = 0; x < res; ++x) {
            const double wave = amp * std::sin(2.0 * M_PI * (cx * x + sy * y) / period + phase);
            for (int c = 0; c < 3; ++c) px(c, y, x) += wave;
          }
      }
      break;
    }
    case SynthKind::stripes: {
      const double angle = sig_rng_copy.uniform(0.0, M_PI);
      const double period = sig_rng_copy.uniform(4.0, 9.0);
      double c0[3] = {sig_rng_copy.uniform(0.1, 0.4), sig_rng_copy.uniform(0.1, 0.4),
                      sig_rng_copy.uniform(0.1, 0.4)};
      double c1[3] = {sig_rng_copy.uniform(0.6, 0.9), sig_rng_copy.uniform(0.6, 0.9),
                      sig_rng_copy.uniform(0.6, 0.9)};
      const double phase = sig_rng_copy.uniform(0.0, period) + jitter_rng.uniform(-1.0, 1.0);
      const double ca = std::cos(angle), sa = std::sin(angle);
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
          const double t = 0.5 + 0.5 * std::sin(2.0 * M_PI * (ca * x + sa * y + phase) / period);
          for (int c = 0; c < 3; ++c) px(c, y, x) = c0[c] + t * (c1[c] - c0[c]);
        }
      break;
    }
    case SynthKind::glyphs: {
      bool cells[25];
      for (bool& b : cells) b = sig_rng_copy.uniform() < 0.45;
      double fg[3] = {sig_rng_copy.uniform(0.6, 0.95), sig_rng_copy.uniform(0.6, 0.95),
                      sig_rng_copy.uniform(0.6, 0.95)};
      double bg[3] = {sig_rng_copy.uniform(0.05, 0.3), sig_rng_copy.uniform(0.05, 0.3),
                      sig_rng_copy.uniform(0.05, 0.3)};
      const int oy = jitter_rng.uniform_int(5) - 2;
      const int ox = jitter_rng.uniform_int(5) - 2;
      const double cell = res / 7.0;
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
          const int gy = static_cast<int>((y - oy) / cell) - 1;
          const int gx = static_cast<int>((x - ox) / cell) - 1;
          const bool on =
              gy >= 0 && gy < 5 && gx >= 0 && gx < 5 && cells[gy * 5 + gx];
          for (int c = 0; c < 3; ++c) px(c, y, x) = on ? fg[c] : bg[c];
        }
      break;
    }
  }
  for (double& val : v) val = val < 0.0 ? 0.0 : (val > 1.0 ? 1.0 : val);
  return Tensor::from_data({3, res, res}, std::move(v));
}

}  // namespace detail

// n images of one synthetic instance (signature fixed by seed), split into
// protect and reference halves.
inline InstanceDataset synth_dataset(SynthKind kind, int n, int res, std::uint64_t seed) {
  if (n < 2) throw ConfigError("synth_dataset: need n >= 2");
  RandomStream jitter(seed * 7919 + 13);
  std::vector<Tensor> imgs;
  imgs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    RandomStream signature(seed);  // same signature stream for every image
    imgs.push_back(detail::render_synth_image(kind, res, signature, jitter));
  }
  ImageBatch all = ImageBatch::uniform_cond(stack_outer(imgs), kCondInstance);
  return detail::split_instance(all, "synth-" + std::to_string(seed), seed);
}

// A generic class set: `count` images, each with its own signature. Used to
// pre-train the base model and give the class conditioning something to
// mean.
inline ImageBatch synth_class_set(SynthKind kind, int count, int res, std::uint64_t seed) {
  RandomStream jitter(seed * 104729 + 7);
  std::vector<Tensor> imgs;
  imgs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    RandomStream signature(seed * 1000003 + static_cast<std::uint64_t>(i) + 1);
    imgs.push_back(detail::render_synth_image(kind, res, signature, jitter));
  }
  return ImageBatch::uniform_cond(stack_outer(imgs), kCondClass);
}

}  // namespace cloak
