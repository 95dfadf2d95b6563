#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cloak/diffusion.hpp"
#include "cloak/transforms.hpp"

namespace cloak {

// Class-conditioned samples drawn from the pre-trained model before any
// fine-tuning happens; frozen thereafter and used as the prior target.
struct PriorSet {
  ImageBatch images;
  int count() const { return images.images.defined() ? images.count() : 0; }
};

inline PriorSet make_prior_set(const DenoiserModel& base, const NoiseSchedule& sched,
                               int sampler_steps, int count, RandomStream& rng) {
  PriorSet p;
  p.images = sample(base, kCondClass, sched, sampler_steps, count, rng);
  return p;
}

struct TrainConfig {
  double lr = 1e-3;
  int steps = 1000;
  double lambda = 1.0;  // prior-preservation weight
  int batch_size = 2;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("TrainConfig: lr must be positive");
    if (lambda < 0.0) throw ConfigError("TrainConfig: lambda must be >= 0");
    if (steps < 0 || batch_size < 1) throw ConfigError("TrainConfig: bad steps/batch");
  }
};

// Instance denoising term plus lambda times a prior term, each a
// single-sample Monte Carlo estimate with independent draws. With
// lambda == 0 this consumes exactly the draws of denoise_loss(x), so the
// two are interchangeable under a shared stream.
template <class Model>
Tensor dreambooth_loss(const ImageBatch& x, const PriorSet& prior, const Model& model,
                       const NoiseSchedule& sched, double lambda, RandomStream& rng) {
  Tensor instance = denoise_loss(x, model, sched, rng);
  if (lambda == 0.0) return instance;
  if (prior.count() == 0)
    throw ConfigError("dreambooth_loss: lambda > 0 requires a non-empty prior set");
  std::vector<int> idx(static_cast<std::size_t>(x.count()));
  for (int& i : idx) i = rng.uniform_int(prior.count());
  ImageBatch prior_batch = prior.images.subset(idx);
  Tensor prior_term = denoise_loss(prior_batch, model, sched, rng, kCondClass);
  return add(instance, scale(prior_term, lambda));
}

// Lower-level training loss: draw one transform per instance image, apply
// it, then take the DreamBooth loss on the transformed batch. The prior
// term sees untransformed prior images.
template <class Model>
Tensor robust_db_loss(const ImageBatch& x, const TransformSpec& transform,
                      const PriorSet& prior, const Model& model,
                      const NoiseSchedule& sched, double lambda, RandomStream& rng) {
  ImageBatch transformed = transform_batch_per_image(x, transform, rng);
  return dreambooth_loss(transformed, prior, model, sched, lambda, rng);
}

namespace detail {
inline void sgd_apply(DenoiserModel& model, double lr) {
  for (Tensor* p : model.params()) {
    if (!p->has_grad()) continue;
    double* v = p->data();
    const std::vector<double>& g = p->grad();
    for (std::int64_t i = 0; i < p->size(); ++i) v[i] -= lr * g[static_cast<std::size_t>(i)];
    p->grad().clear();
  }
}
}  // namespace detail

// k_steps of plain SGD on the robust DreamBooth loss, mutating the model in
// place. Per step the stream is consumed in a fixed order (batch indices,
// transform draws, instance noise, prior indices, prior noise), so the same
// stream split K + (N-K) reproduces N bit-exactly.
inline void train_steps(DenoiserModel& model, const ImageBatch& data,
                        const TransformSpec& transform, const PriorSet& prior,
                        const TrainConfig& cfg, const NoiseSchedule& sched, int k_steps,
                        RandomStream& rng) {
  cfg.validate();
  if (k_steps < 0) throw ConfigError("train_steps: k_steps must be >= 0");
  for (int step = 0; step < k_steps; ++step) {
    std::vector<int> idx(static_cast<std::size_t>(cfg.batch_size));
    for (int& i : idx) i = rng.uniform_int(data.count());
    ImageBatch batch = data.subset(idx);
    Tensor loss = robust_db_loss(batch, transform, prior, model, sched, cfg.lambda, rng);
    if (!std::isfinite(loss.item()))
      throw NumericError("train_steps: non-finite loss at step " + std::to_string(step));
    backward(loss);
    detail::sgd_apply(model, cfg.lr);
  }
}

// M step-staggered snapshots of one clean-data training trajectory;
// snapshot m has seen exactly floor(m * n_max / M) steps.
struct SurrogatePool {
  std::vector<DenoiserModel> snapshots;
  std::vector<int> trained_steps;
  std::vector<std::string> rng_digests;  // stream state at each boundary
  int n_max = 0;
  ImageBatch clean_anchor;

  int size() const { return static_cast<int>(snapshots.size()); }
};

inline SurrogatePool build_staggered_pool(const DenoiserModel& theta0,
                                          const ImageBatch& clean, const TransformSpec& transform,
                                          const PriorSet& prior, int pool_size, int n_max,
                                          const TrainConfig& cfg, const NoiseSchedule& sched,
                                          RandomStream& rng) {
  if (pool_size < 1) throw ConfigError("build_staggered_pool: M must be >= 1");
  if (n_max < pool_size) throw ConfigError("build_staggered_pool: N_max must be >= M");
  SurrogatePool pool;
  pool.n_max = n_max;
  pool.clean_anchor = clean.clone();
  DenoiserModel live = theta0.clone();
  int done = 0;
  for (int m = 1; m <= pool_size; ++m) {
    const int target = static_cast<int>(static_cast<std::int64_t>(m) * n_max / pool_size);
    train_steps(live, clean, transform, prior, cfg, sched, target - done, rng);
    done = target;
    pool.snapshots.push_back(live.clone());
    pool.trained_steps.push_back(target);
    pool.rng_digests.push_back(rng.state_digest());
  }
  return pool;
}

// The unauthorized trainer: fine-tune a fresh copy of the released model on
// the (possibly poisoned) image set, with or without the transformation
// pipeline.
inline DenoiserModel victim_finetune(const DenoiserModel& model_init, const ImageBatch& train_set,
                                     const TransformSpec& transform, const PriorSet& prior,
                                     const TrainConfig& cfg, const NoiseSchedule& sched,
                                     RandomStream& rng) {
  DenoiserModel victim = model_init.clone();
  train_steps(victim, train_set, transform, prior, cfg, sched, cfg.steps, rng);
  return victim;
}

// ---------------------------------------------------------------------------
// Pool checkpoint directory: one model file per snapshot plus an index.

inline void save_pool(const std::string& dir, const SurrogatePool& pool,
                      const NoiseSchedule& sched, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream index(fs::path(dir) / "pool.index");
  if (!index) throw IoError("save_pool: cannot write index in " + dir);
  index << "n_max=" << pool.n_max << "\n";
  for (int m = 0; m < pool.size(); ++m) {
    const std::string name = "snapshot_" + std::to_string(m + 1) + ".ckpt";
    save_model_file((fs::path(dir) / name).string(), pool.snapshots[static_cast<std::size_t>(m)],
                    sched, seed);
    index << "m=" << (m + 1) << " steps=" << pool.trained_steps[static_cast<std::size_t>(m)]
          << " rng=" << pool.rng_digests[static_cast<std::size_t>(m)] << " file=" << name << "\n";
  }
}

}  // namespace cloak
