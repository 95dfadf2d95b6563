#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cloak/trainer.hpp"

namespace cloak {

// Crafting objective: the victim's own denoising loss on the poison batch
// under the instance conditioning, ascended w.r.t. pixels.
template <class Model>
Tensor gen_loss(const ImageBatch& poison, const Model& model, const NoiseSchedule& sched,
                RandomStream& rng) {
  return denoise_loss(poison, model, sched, rng, kCondInstance);
}

struct PerturbationStats {
  double linf = 0.0;
  double l2 = 0.0;
  double pix_min = 0.0;
  double pix_max = 0.0;
};

// The poison under construction: clean anchors stay frozen, the current
// images never leave the l-inf ball of radius r around them nor [0,1].
struct PoisonSet {
  ImageBatch base;
  ImageBatch current;
  double radius = 0.0;
  std::vector<PerturbationStats> history;  // one record per PGD update

  static PoisonSet from_clean(const ImageBatch& clean, double radius) {
    if (radius < 0.0 || radius > 1.0)
      throw ConfigError("PoisonSet: radius must be in [0,1]");
    PoisonSet p;
    p.base = clean.clone();
    p.current = clean.clone();
    p.radius = radius;
    return p;
  }

  PerturbationStats stats() const {
    PerturbationStats s;
    const double* c = current.images.data();
    const double* b = base.images.data();
    double sq = 0.0;
    s.pix_min = 1e300;
    s.pix_max = -1e300;
    for (std::int64_t i = 0; i < current.images.size(); ++i) {
      const double d = c[i] - b[i];
      s.linf = std::max(s.linf, std::abs(d));
      sq += d * d;
      s.pix_min = std::min(s.pix_min, c[i]);
      s.pix_max = std::max(s.pix_max, c[i]);
    }
    s.l2 = std::sqrt(sq);
    return s;
  }
};

// One projected signed-gradient ascent step. sign(0) = 0. The projection
// guarantees the float-computed difference |current - base| <= r exactly:
// additions that round past the boundary are nudged back by one ulp.
inline void pgd_step(PoisonSet& pset, const std::vector<double>& grad, double alpha) {
  if (static_cast<std::int64_t>(grad.size()) != pset.current.images.size())
    throw ShapeError("pgd_step: gradient size mismatch");
  double* cur = pset.current.images.data();
  const double* base = pset.base.images.data();
  const double r = pset.radius;
  for (std::int64_t i = 0; i < pset.current.images.size(); ++i) {
    const double g = grad[static_cast<std::size_t>(i)];
    const double sgn = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    double d = cur[i] + alpha * sgn - base[i];
    if (d > r) d = r;
    if (d < -r) d = -r;
    double v = base[i] + d;
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    while (v - base[i] > r) v = std::nextafter(v, base[i]);
    while (v - base[i] < -r) v = std::nextafter(v, base[i]);
    cur[i] = v;
  }
  pset.history.push_back(pset.stats());
}

// Copy the surrogate and look K training steps ahead on the current poison;
// the original stays untouched.
inline DenoiserModel kstep_lookahead(const DenoiserModel& theta, const ImageBatch& poison,
                                     const TransformSpec& transform, const PriorSet& prior,
                                     int k, const TrainConfig& cfg, const NoiseSchedule& sched,
                                     RandomStream& rng) {
  DenoiserModel unrolled = theta.clone();
  train_steps(unrolled, poison, transform, prior, cfg, sched, k, rng);
  return unrolled;
}

struct CraftConfig {
  double radius = 11.0 / 255.0;
  double alpha = 1.0 / 255.0;
  int pgd_steps = 6;      // PGD iterations per outer crafting loop
  int outer_loops = 200;  // C
  int pool_size = 5;      // M
  int surrogate_batch = 1;  // B
  int unroll_steps = 1;   // K
  int eot_samples = 1;    // J
  int n_max = 1000;       // pool staggering horizon
  bool advance_surrogates = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (radius < 0.0 || radius > 1.0) throw ConfigError("CraftConfig: bad radius");
    if (alpha <= 0.0 || alpha > radius + 1e-300)
      throw ConfigError("CraftConfig: need 0 < alpha <= radius");
    if (pgd_steps < 1 || outer_loops < 0 || pool_size < 1 || surrogate_batch < 1 ||
        unroll_steps < 0 || eot_samples < 1 || n_max < 1)
      throw ConfigError("CraftConfig: bad loop counts");
  }
};

struct CraftLoopRecord {
  int loop = 0;
  double l_adv = 0.0;  // mean crafting loss over this loop's PGD iterations
  PerturbationStats stats;
  std::string transform_draws;  // realized EOT choices, for replay logs
};

struct CraftResult {
  PoisonSet poison;
  std::vector<CraftLoopRecord> trace;
};

// The full crafting loop: sample surrogates from the pool, unroll each K
// steps on the current poison, advance the pooled copy one robust step,
// then ascend the poison with EOT-averaged signed gradients. Gradients are
// taken through the crafting loss at the unrolled weights only; the unroll
// itself is never differentiated.
inline CraftResult craft(const ImageBatch& clean, const SurrogatePool& pool,
                         const TransformSpec& transform, const PriorSet& prior,
                         const CraftConfig& ccfg, const TrainConfig& tcfg,
                         const NoiseSchedule& sched, RandomStream& rng) {
  ccfg.validate();
  if (pool.size() < 1) throw ConfigError("craft: empty surrogate pool");

  CraftResult result;
  result.poison = PoisonSet::from_clean(clean, ccfg.radius);
  PoisonSet& pset = result.poison;

  // the pool evolves during crafting; work on an independent copy
  std::vector<DenoiserModel> surrogates;
  surrogates.reserve(static_cast<std::size_t>(pool.size()));
  for (const DenoiserModel& m : pool.snapshots) surrogates.push_back(m.clone());

  for (int loop = 1; loop <= ccfg.outer_loops; ++loop) {
    // sample a batch of surrogates (uniform, with replacement); a pool of
    // one is taken as-is so degenerate configs consume no draws
    std::vector<int> picked(static_cast<std::size_t>(ccfg.surrogate_batch), 0);
    if (pool.size() > 1)
      for (int& idx : picked) idx = rng.uniform_int(pool.size());

    // unroll copies on the current poison, then advance the pooled models
    std::vector<DenoiserModel> unrolled;
    unrolled.reserve(picked.size());
    for (int idx : picked)
      unrolled.push_back(kstep_lookahead(surrogates[static_cast<std::size_t>(idx)],
                                         pset.current, transform, prior, ccfg.unroll_steps,
                                         tcfg, sched, rng));
    if (ccfg.advance_surrogates)
      for (int idx : picked)
        train_steps(surrogates[static_cast<std::size_t>(idx)], pset.current, transform, prior,
                    tcfg, sched, 1, rng);

    double loop_loss = 0.0;
    std::vector<SampledTransform> draws;
    for (int s = 0; s < ccfg.pgd_steps; ++s) {
      std::vector<double> grad_acc(static_cast<std::size_t>(pset.current.images.size()), 0.0);
      double loss_acc = 0.0;
      for (const DenoiserModel& model : unrolled) {
        EotEstimate est = eot_estimate(
            [&](const ImageBatch& transformed) {
              return gen_loss(transformed, model, sched, rng);
            },
            pset.current, transform, ccfg.eot_samples, rng, &draws);
        loss_acc += est.loss_mean;
        for (std::size_t i = 0; i < grad_acc.size(); ++i) grad_acc[i] += est.grad[i];
      }
      const double scale_factor = 1.0 / static_cast<double>(unrolled.size());
      for (double& g : grad_acc) g *= scale_factor;
      const double l_adv = loss_acc * scale_factor;
      if (!std::isfinite(l_adv))
        throw NumericError("craft: non-finite loss at loop " + std::to_string(loop) +
                           ", pgd iteration " + std::to_string(s));
      loop_loss += l_adv;
      pgd_step(pset, grad_acc, ccfg.alpha);
    }

    std::string draw_log;
    for (std::size_t d = 0; d < draws.size(); ++d) {
      if (d) draw_log += "|";
      draw_log += draws[d].describe();
    }
    result.trace.push_back({loop, loop_loss / ccfg.pgd_steps, pset.stats(), draw_log});
  }
  return result;
}

// Fixed-model adversarial baseline: pure PGD ascent on the crafting loss
// with no pool, no unrolling, no transformations.
inline CraftResult craft_baseline_pgd(const ImageBatch& clean, const DenoiserModel& surrogate,
                                      const CraftConfig& ccfg, const NoiseSchedule& sched,
                                      RandomStream& rng) {
  ccfg.validate();
  CraftResult result;
  result.poison = PoisonSet::from_clean(clean, ccfg.radius);
  PoisonSet& pset = result.poison;

  for (int loop = 1; loop <= ccfg.outer_loops; ++loop) {
    double loop_loss = 0.0;
    for (int s = 0; s < ccfg.pgd_steps; ++s) {
      Tensor leaf = pset.current.images.clone(true);
      ImageBatch batch = ImageBatch::wrap(leaf, pset.current.cond_ids);
      Tensor loss = gen_loss(batch, surrogate, sched, rng);
      if (!std::isfinite(loss.item()))
        throw NumericError("craft_baseline_pgd: non-finite loss at loop " +
                           std::to_string(loop) + ", pgd iteration " + std::to_string(s));
      loop_loss += loss.item();
      backward(loss);
      pgd_step(pset, leaf.grad(), ccfg.alpha);
    }
    result.trace.push_back({loop, loop_loss / ccfg.pgd_steps, pset.stats()});
  }
  return result;
}

}  // namespace cloak
