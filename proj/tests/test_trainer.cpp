#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cloak/trainer.hpp"

using namespace cloak;

namespace {

ImageBatch random_batch(int n, int res, RandomStream& rng, int cond = kCondInstance) {
  std::vector<double> v(static_cast<std::size_t>(n) * 3 * res * res);
  for (double& x : v) x = rng.uniform(0.1, 0.9);
  return ImageBatch::uniform_cond(Tensor::from_data({n, 3, res, res}, std::move(v)), cond);
}

struct Lab {
  ArchDesc arch;
  NoiseSchedule sched = make_schedule(100, 1e-4, 0.02);
  DenoiserModel model;
  ImageBatch data;
  PriorSet prior;

  explicit Lab(int res, std::uint64_t seed, int n_images = 4) {
    RandomStream rng(seed);
    arch.resolution = res;
    model = DenoiserModel(arch, rng);
    data = random_batch(n_images, res, rng);
    prior.images = random_batch(8, res, rng, kCondClass);
  }
};

struct FixedPredictor {
  Tensor out;
  Tensor forward(const Tensor&, int, int) const { return out; }
};

}  // namespace

TEST_CASE("dreambooth_loss with lambda 0 equals denoise_loss on a shared stream") {
  Lab lab(8, 1);
  RandomStream r1(33), r2(33);
  const double a = dreambooth_loss(lab.data, lab.prior, lab.model, lab.sched, 0.0, r1).item();
  const double b = denoise_loss(lab.data, lab.model, lab.sched, r2).item();
  CHECK(a == b);
  CHECK(r1.state_digest() == r2.state_digest());
}

TEST_CASE("default prior weight is 1") { CHECK(TrainConfig{}.lambda == 1.0); }

TEST_CASE("oracle model reproducing both x and the prior gives zero loss") {
  RandomStream rng(5);
  ImageBatch x = random_batch(1, 8, rng);
  PriorSet prior;
  prior.images = ImageBatch::uniform_cond(x.images.clone(), kCondClass);
  FixedPredictor oracle{x.image(0).detach()};
  RandomStream r(7);
  CHECK(dreambooth_loss(x, prior, oracle, make_schedule(100, 1e-4, 0.02), 1.0, r).item() ==
        doctest::Approx(0.0));
}

TEST_CASE("lambda > 0 with empty prior is an error") {
  Lab lab(8, 2);
  PriorSet empty;
  RandomStream r(1);
  CHECK_THROWS_AS(dreambooth_loss(lab.data, empty, lab.model, lab.sched, 1.0, r),
                  ConfigError);
}

TEST_CASE("robust_db_loss with identity transforms equals dreambooth_loss") {
  Lab lab(8, 3);
  RandomStream r1(11), r2(11);
  const double a =
      robust_db_loss(lab.data, TransformSpec::identity(), lab.prior, lab.model, lab.sched,
                     1.0, r1)
          .item();
  const double b = dreambooth_loss(lab.data, lab.prior, lab.model, lab.sched, 1.0, r2).item();
  CHECK(a == b);
}

TEST_CASE("certain flip on a symmetric image equals the plain loss") {
  RandomStream rng(9);
  // left-right symmetric image
  const int res = 8;
  std::vector<double> v(static_cast<std::size_t>(3) * res * res);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        const double val = 0.1 + 0.05 * std::min(x, res - 1 - x) + 0.03 * y + 0.1 * c;
        v[static_cast<std::size_t>((c * res + y) * res + x)] = val;
      }
  ImageBatch sym =
      ImageBatch::uniform_cond(Tensor::from_data({1, 3, res, res}, std::move(v)), kCondInstance);

  Lab lab(res, 10, 1);
  TransformSpec certain_flip;
  certain_flip.hflip_p = 1.0;

  RandomStream r1(21), r2(21);
  const double a =
      robust_db_loss(sym, certain_flip, lab.prior, lab.model, lab.sched, 1.0, r1).item();
  const double b = dreambooth_loss(sym, lab.prior, lab.model, lab.sched, 1.0, r2).item();
  CHECK(a == b);
}

TEST_CASE("full pipeline changes the loss on asymmetric images") {
  Lab lab(16, 4);
  RandomStream r1(13), r2(13);
  const double with_pipeline = robust_db_loss(lab.data, TransformSpec::standard(16), lab.prior,
                                              lab.model, lab.sched, 1.0, r1)
                                   .item();
  const double identity = robust_db_loss(lab.data, TransformSpec::identity(), lab.prior,
                                         lab.model, lab.sched, 1.0, r2)
                              .item();
  CHECK(with_pipeline != identity);
}

TEST_CASE("train_steps with k=0 leaves parameters bit-identical") {
  Lab lab(8, 6);
  DenoiserModel before = lab.model.clone();
  RandomStream r(3);
  TrainConfig cfg;
  train_steps(lab.model, lab.data, TransformSpec::identity(), lab.prior, cfg, lab.sched, 0, r);
  CHECK(lab.model.same_values(before));
}

TEST_CASE("one train step equals a manual SGD step on a shared stream") {
  Lab lab(8, 7);
  TrainConfig cfg;
  cfg.batch_size = 2;

  DenoiserModel manual = lab.model.clone();
  RandomStream r1(17), r2(17);

  // manual route
  {
    std::vector<int> idx(static_cast<std::size_t>(cfg.batch_size));
    for (int& i : idx) i = r1.uniform_int(lab.data.count());
    ImageBatch batch = lab.data.subset(idx);
    Tensor loss = robust_db_loss(batch, TransformSpec::identity(), lab.prior, manual,
                                 lab.sched, cfg.lambda, r1);
    backward(loss);
    for (Tensor* p : manual.params()) {
      if (!p->has_grad()) continue;
      for (std::int64_t i = 0; i < p->size(); ++i)
        p->data()[i] -= cfg.lr * p->grad()[static_cast<std::size_t>(i)];
      p->grad().clear();
    }
  }

  train_steps(lab.model, lab.data, TransformSpec::identity(), lab.prior, cfg, lab.sched, 1, r2);
  CHECK(lab.model.same_values(manual));
}

TEST_CASE("train_steps composes bit-exactly: K then N-K equals N") {
  const int total = 6, split = 2;
  Lab a(8, 8), b(8, 8);
  TrainConfig cfg;
  RandomStream r1(29), r2(29);
  TransformSpec t = TransformSpec::standard(8);

  train_steps(a.model, a.data, t, a.prior, cfg, a.sched, split, r1);
  train_steps(a.model, a.data, t, a.prior, cfg, a.sched, total - split, r1);
  train_steps(b.model, b.data, t, b.prior, cfg, b.sched, total, r2);
  CHECK(a.model.same_values(b.model));
}

TEST_CASE("pool staggering follows floor(m*N_max/M)") {
  Lab lab(8, 9, 2);
  TrainConfig cfg;
  cfg.batch_size = 1;
  RandomStream r(31);

  SurrogatePool p5 = build_staggered_pool(lab.model, lab.data, TransformSpec::identity(),
                                          lab.prior, 5, 1000, cfg, lab.sched, r);
  CHECK(p5.trained_steps == std::vector<int>{200, 400, 600, 800, 1000});

  RandomStream r2(32);
  SurrogatePool p1 = build_staggered_pool(lab.model, lab.data, TransformSpec::identity(),
                                          lab.prior, 1, 7, cfg, lab.sched, r2);
  CHECK(p1.trained_steps == std::vector<int>{7});

  RandomStream r3(33);
  SurrogatePool p3 = build_staggered_pool(lab.model, lab.data, TransformSpec::identity(),
                                          lab.prior, 3, 10, cfg, lab.sched, r3);
  CHECK(p3.trained_steps == std::vector<int>{3, 6, 10});
  for (std::size_t i = 1; i < p3.trained_steps.size(); ++i)
    CHECK(p3.trained_steps[i] >= p3.trained_steps[i - 1]);

  // snapshots are genuinely staggered prefixes of one trajectory
  CHECK_FALSE(p3.snapshots[0].same_values(p3.snapshots[2]));
}

TEST_CASE("pool snapshots are independent deep copies") {
  Lab lab(8, 12, 2);
  TrainConfig cfg;
  RandomStream r(41);
  SurrogatePool pool = build_staggered_pool(lab.model, lab.data, TransformSpec::identity(),
                                            lab.prior, 2, 4, cfg, lab.sched, r);
  const double before = pool.snapshots[1].params()[0]->data()[0];
  pool.snapshots[0].params()[0]->data()[0] += 5.0;
  CHECK(pool.snapshots[1].params()[0]->data()[0] == before);
}

TEST_CASE("victim fine-tuning on clean data lowers held-out denoise loss") {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Lab lab(16, 100 + seed);
    RandomStream data_rng(900 + seed);
    ImageBatch heldout = random_batch(2, 16, data_rng);

    TrainConfig cfg;
    cfg.steps = 150;
    RandomStream r(55 + seed);
    DenoiserModel victim = victim_finetune(lab.model, lab.data, TransformSpec::identity(),
                                           lab.prior, cfg, lab.sched, r);

    RandomStream e1(7), e2(7);
    const double after = denoise_loss(heldout, victim, lab.sched, e1).item();
    const double before = denoise_loss(heldout, lab.model, lab.sched, e2).item();
    if (after < before) ++improved;
  }
  CHECK(improved >= 3);
}

TEST_CASE("victim steps=0 returns the initialization; Stand vs Trans victims differ") {
  Lab lab(8, 13);
  TrainConfig zero;
  zero.steps = 0;
  RandomStream r(1);
  DenoiserModel same = victim_finetune(lab.model, lab.data, TransformSpec::identity(),
                                       lab.prior, zero, lab.sched, r);
  CHECK(same.same_values(lab.model));

  TrainConfig cfg;
  cfg.steps = 5;
  RandomStream ra(77), rb(77);
  DenoiserModel stand = victim_finetune(lab.model, lab.data, TransformSpec::identity(),
                                        lab.prior, cfg, lab.sched, ra);
  DenoiserModel trans = victim_finetune(lab.model, lab.data, TransformSpec::standard(8),
                                        lab.prior, cfg, lab.sched, rb);
  CHECK_FALSE(stand.same_values(trans));
}

TEST_CASE("monotone learning: late dreambooth losses undercut early ones") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Lab lab(16, 200 + seed);
    TrainConfig cfg;
    RandomStream r(10 + seed);
    const int steps = 100;
    std::vector<double> trace;
    for (int s = 0; s < steps; ++s) {
      std::vector<int> idx(static_cast<std::size_t>(cfg.batch_size));
      for (int& i : idx) i = r.uniform_int(lab.data.count());
      ImageBatch batch = lab.data.subset(idx);
      Tensor loss = robust_db_loss(batch, TransformSpec::identity(), lab.prior, lab.model,
                                   lab.sched, cfg.lambda, r);
      trace.push_back(loss.item());
      backward(loss);
      detail::sgd_apply(lab.model, cfg.lr);
    }
    const int tenth = steps / 10;
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < tenth; ++i) {
      head += trace[static_cast<std::size_t>(i)];
      tail += trace[static_cast<std::size_t>(steps - tenth + i)];
    }
    CHECK(tail < head);
  }
}

TEST_CASE("non-finite loss aborts with the step index") {
  Lab lab(8, 14);
  lab.model.params()[0]->data()[0] = 1e300;  // force an overflow
  TrainConfig cfg;
  RandomStream r(3);
  CHECK_THROWS_WITH_AS(
      train_steps(lab.model, lab.data, TransformSpec::identity(), lab.prior, cfg, lab.sched,
                  3, r),
      doctest::Contains("step 0"), NumericError);
}
