#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cloak/tensor.hpp"

using namespace cloak;

namespace {

Tensor vec(std::vector<double> v) {
  Shape s{static_cast<int>(v.size())};
  return Tensor::from_data(s, std::move(v));
}

Tensor random_tensor(const Shape& shape, RandomStream& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(shape, std::move(v));
}

}  // namespace

TEST_CASE("elementwise add/relu/square basics") {
  Tensor a = vec({1, 2});
  Tensor b = vec({3, 4});
  Tensor c = add(a, b);
  CHECK(c.values() == std::vector<double>{4, 6});

  Tensor r = relu(vec({-1, 2}));
  CHECK(r.values() == std::vector<double>{0, 2});

  Tensor x = vec({3});
  x.set_requires_grad(true);
  Tensor y = square(x);
  CHECK(y.item() == 9.0);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("elementwise dispatcher matches named ops") {
  RandomStream rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  CHECK(elementwise(EwOp::mul, &a == &a ? a : a, &b).values() == mul(a, b).values());
  CHECK(elementwise(EwOp::relu, a).values() == relu(a).values());
  CHECK(elementwise(EwOp::scale, a, nullptr, 2.5).values() == scale(a, 2.5).values());
}

TEST_CASE("shape mismatch raises a structured error") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), ShapeError);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("trailing-dimension broadcasting") {
  Tensor img = Tensor::full({2, 3, 3}, 1.0);
  Tensor chan = Tensor::from_data({2, 1, 1}, {10.0, 20.0});
  Tensor out = add(img, chan);
  CHECK(out.data()[0] == 11.0);
  CHECK(out.data()[9] == 21.0);

  // grad of broadcast operand sums over stretched dims
  chan.set_requires_grad(true);
  Tensor loss = sum(add(img, chan));
  backward(loss);
  CHECK(chan.grad()[0] == doctest::Approx(9.0));
  CHECK(chan.grad()[1] == doctest::Approx(9.0));
}

TEST_CASE("scalar-op distributivity within tight tolerance") {
  RandomStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    const double k = rng.uniform(-2.0, 2.0);
    Tensor lhs = scale(add(a, b), k);
    Tensor rhs = add(scale(a, k), scale(b, k));
    for (std::int64_t i = 0; i < lhs.size(); ++i) {
      const double x = lhs.data()[i], y = rhs.data()[i];
      // one ulp per rounding step at the scale of the accumulated terms
      // (the result itself may cancel toward zero)
      const double at = std::abs(a.data()[i] * k), bt = std::abs(b.data()[i] * k);
      const double s = std::max({at, bt, std::abs(x)});
      const double ulp = std::abs(std::nextafter(s, INFINITY) - s);
      CHECK(std::abs(x - y) <= 4 * ulp);
    }
  }
}

TEST_CASE("matmul identity and known product") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor x = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(eye, x).values() == x.values());

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  CHECK(c.values() == std::vector<double>{3, 7});
}

TEST_CASE("matmul gradients match finite differences") {
  RandomStream rng(23);
  Tensor a0 = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  auto f = [&](const Tensor& a) { return sum(matmul(a, b)); };
  CHECK(finite_diff_check(f, a0) < 1e-4);

  auto g = [&](const Tensor& bb) { return sum(square(matmul(a0, bb))); };
  CHECK(finite_diff_check(g, b) < 1e-4);
}

TEST_CASE("conv2d identity kernel and constant image") {
  RandomStream rng(3);
  Tensor x = random_tensor({1, 4, 4}, rng);
  Tensor ident = Tensor::from_data({1, 1, 1, 1}, {1.0});
  CHECK(conv2d(x, ident, 1, 0).values() == x.values());

  Tensor c = Tensor::full({1, 5, 5}, 2.0);
  Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(c, ones, 1, 1);
  // interior of an all-ones 3x3 on constant 2 is 9*2
  CHECK(y.data()[1 * 5 + 1] == doctest::Approx(18.0));
  CHECK(y.data()[2 * 5 + 2] == doctest::Approx(18.0));
}

TEST_CASE("conv2d gradients match finite differences") {
  RandomStream rng(41);
  Tensor x = random_tensor({1, 5, 5}, rng);
  Tensor k = random_tensor({2, 1, 3, 3}, rng);
  auto f = [&](const Tensor& xx) { return sum(square(conv2d(xx, k, 1, 1))); };
  CHECK(finite_diff_check(f, x) < 1e-4);

  auto g = [&](const Tensor& kk) { return sum(square(conv2d(x, kk, 2, 1))); };
  CHECK(finite_diff_check(g, k) < 1e-4);

  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 0),
                  ShapeError);
}

TEST_CASE("backward on sum gives ones; mse grad is 2x/n") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  Tensor z = Tensor::from_data({1}, {2}, true);
  backward(mse(z, Tensor::zeros({1})));
  CHECK(z.grad()[0] == doctest::Approx(4.0));

  CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ShapeError);
}

TEST_CASE("composite net gradient matches finite differences") {
  RandomStream rng(57);
  Tensor k = random_tensor({2, 1, 3, 3}, rng);
  Tensor w = random_tensor({2 * 3 * 3, 1}, rng);
  Tensor target = random_tensor({1, 1}, rng);
  Tensor x0 = random_tensor({1, 3, 3}, rng);
  auto f = [&](const Tensor& x) {
    Tensor h = relu(conv2d(x, k, 1, 1));
    Tensor flat = reshape(h, {1, 2 * 3 * 3});
    return mse(matmul(flat, w), target);
  };
  CHECK(finite_diff_check(f, x0) < 1e-4);
}

TEST_CASE("finite_diff_check reference behaviors") {
  Tensor x = Tensor::from_data({1}, {3.0});
  auto sq = [](const Tensor& t) { return square(t); };
  CHECK(finite_diff_check(sq, x) < 1e-6);

  auto constant = [](const Tensor& t) {
    return mul(sum(t), Tensor::scalar(0.0));
  };
  CHECK(finite_diff_check(constant, x) == doctest::Approx(0.0));
}

TEST_CASE("spatial ops: flip involution, crop window, upsample, resize") {
  RandomStream rng(99);
  Tensor x = random_tensor({3, 6, 6}, rng);
  CHECK(hflip(hflip(x)).values() == x.values());

  Tensor cropped = crop(x, 1, 2, 3, 3);
  CHECK(cropped.shape() == Shape{3, 3, 3});
  CHECK(cropped.data()[0] == x.data()[1 * 6 + 2]);

  Tensor up = upsample_nearest2x(x);
  CHECK(up.shape() == Shape{3, 12, 12});
  CHECK(up.data()[0] == x.data()[0]);
  CHECK(up.data()[1] == x.data()[0]);

  // identity resize is exact; general resize preserves constants
  CHECK(resize_bilinear(x, 6, 6).values() == x.values());
  Tensor c = Tensor::full({1, 4, 4}, 0.7);
  Tensor rz = resize_bilinear(c, 7, 5);
  for (double v : rz.values()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("spatial op gradients match finite differences") {
  RandomStream rng(123);
  Tensor x = random_tensor({2, 5, 5}, rng);

  auto fflip = [](const Tensor& t) { return sum(square(hflip(t))); };
  CHECK(finite_diff_check(fflip, x) < 1e-4);

  auto fcrop = [](const Tensor& t) { return sum(square(crop(t, 1, 1, 3, 3))); };
  CHECK(finite_diff_check(fcrop, x) < 1e-4);

  auto fup = [](const Tensor& t) { return sum(square(upsample_nearest2x(t))); };
  CHECK(finite_diff_check(fup, x) < 1e-4);

  auto frz = [](const Tensor& t) { return sum(square(resize_bilinear(t, 8, 7))); };
  CHECK(finite_diff_check(frz, x) < 1e-4);

  Tensor kern = Tensor::from_data({3, 3}, {.05, .1, .05, .1, .4, .1, .05, .1, .05});
  auto fdw = [&](const Tensor& t) { return sum(square(depthwise_filter2d(t, kern))); };
  CHECK(finite_diff_check(fdw, x) < 1e-4);
}

TEST_CASE("select_outer routes grads into the right slot") {
  Tensor batch = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor second = select_outer(batch, 1);
  CHECK(second.values() == std::vector<double>{4, 5, 6});
  backward(sum(square(second)));
  CHECK(batch.grad() == std::vector<double>{0, 0, 0, 8, 10, 12});
}

TEST_CASE("gradient accumulation across repeated backward") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  backward(sum(square(x)));
  backward(sum(square(x)));  // separate graph, same leaf
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  NoGradGuard ng;
  Tensor y = square(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("forward determinism: same inputs, bit-identical outputs") {
  RandomStream rng(5);
  Tensor x = random_tensor({2, 8, 8}, rng);
  Tensor k = random_tensor({4, 2, 3, 3}, rng);
  Tensor a = conv2d(x, k, 1, 1);
  Tensor b = conv2d(x, k, 1, 1);
  CHECK(a.values() == b.values());
}

TEST_CASE("FD sweep across all differentiable ops on random inputs") {
  RandomStream rng(2024);
  int cases = 0;
  for (int trial = 0; trial < 4; ++trial) {
    Tensor a = random_tensor({2, 4, 4}, rng);
    Tensor b = random_tensor({2, 4, 4}, rng);
    auto through = [&](auto make) {
      return [&, make](const Tensor& t) { return sum(square(make(t))); };
    };
    CHECK(finite_diff_check(through([&](const Tensor& t) { return add(t, b); }), a) < 1e-4);
    CHECK(finite_diff_check(through([&](const Tensor& t) { return sub(b, t); }), a) < 1e-4);
    CHECK(finite_diff_check(through([&](const Tensor& t) { return mul(t, b); }), a) < 1e-4);
    CHECK(finite_diff_check(
              through([&](const Tensor& t) { return div(t, add(square(b), Tensor::scalar(1.0))); }),
              a) < 1e-4);
    CHECK(finite_diff_check(through([&](const Tensor& t) { return scale(t, -1.7); }), a) < 1e-4);
    CHECK(finite_diff_check(
              through([&](const Tensor& t) { return sqrt_ew(add(square(t), Tensor::scalar(0.1))); }),
              a) < 1e-4);
    cases += 6;
  }
  CHECK(cases >= 20);
}

TEST_CASE("tensor wire format round trip") {
  RandomStream rng(31);
  Tensor t = random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  Tensor back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == t.values());
}
