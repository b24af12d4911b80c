#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ftn/losses.hpp"
#include "ftn/nn.hpp"
#include "oracle_helpers.hpp"

using namespace ftn;

namespace {

Param<double> make_param(const std::string& name, TensorD t) {
  Param<double> p;
  p.name = name;
  p.tensor = std::move(t);
  p.tensor.set_requires_grad(true);
  return p;
}

// Random but fixed projection so the checked gradient is not uniform.
TensorD projection_like(const TensorD& y, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor<double>(y.shape(), rng);
}

}  // namespace

TEST_CASE("grad_check: quadratic analytic anchor") {
  Rng rng(100);
  Param<double> p = make_param("theta", oracle::random_tensor<double>({7}, rng));
  auto f = [&] { return sum(elementwise_mul(p.tensor, p.tensor)); };
  const double err = grad_check<double>(f, {&p});
  CHECK(err <= 1e-9);
}

TEST_CASE("grad_check: cross entropy of a tiny linear model") {
  Rng rng(101);
  Param<double> w = make_param("w", oracle::random_tensor<double>({5, 4}, rng));
  Param<double> b = make_param("b", oracle::random_tensor<double>({5}, rng));
  TensorD x = oracle::random_tensor<double>({3, 4}, rng);
  std::vector<int> labels{0, 2, 4};
  auto f = [&] { return cross_entropy(linear(x, w.tensor, b.tensor), labels); };
  CHECK(grad_check<double>(f, {&w, &b}) <= 1e-5);
}

TEST_CASE("grad_check: frozen params are excluded") {
  Rng rng(102);
  Param<double> active = make_param("a", oracle::random_tensor<double>({4}, rng));
  Param<double> frozen = make_param("f", oracle::random_tensor<double>({4}, rng));
  frozen.tensor.set_requires_grad(false);
  // f depends on the frozen param; if it were probed, the analytic gradient
  // (absent) would disagree with the numeric one.
  auto f = [&] {
    return sum(elementwise_mul(add(active.tensor, frozen.tensor),
                               add(active.tensor, frozen.tensor)));
  };
  CHECK(grad_check<double>(f, {&active, &frozen}) <= 1e-8);
}

TEST_CASE("grad_check rejects non-scalar objectives") {
  Rng rng(103);
  Param<double> p = make_param("p", oracle::random_tensor<double>({3}, rng));
  auto f = [&] { return scale(p.tensor, 2.0); };
  CHECK_THROWS_AS(grad_check<double>(f, {&p}), Error);
}

TEST_CASE("every differentiable op passes grad_check at 1e-4") {
  GradCheckOptions opt;
  opt.eps = 1e-5;

  SUBCASE("conv2d w.r.t. x, w, b") {
    Rng rng(110);
    Param<double> x = make_param("x", oracle::random_tensor<double>({2, 3, 5, 4}, rng));
    Param<double> w = make_param("w", oracle::random_tensor<double>({4, 3, 3, 3}, rng));
    Param<double> b = make_param("b", oracle::random_tensor<double>({4}, rng));
    TensorD proj = projection_like(conv2d(x.tensor, w.tensor, b.tensor, 2, 1), 1);
    auto f = [&] {
      return sum(elementwise_mul(conv2d(x.tensor, w.tensor, b.tensor, 2, 1), proj));
    };
    CHECK(grad_check<double>(f, {&x, &w, &b}, opt) <= 1e-4);
  }

  SUBCASE("batch_norm2d training and eval") {
    Rng rng(111);
    Param<double> x = make_param("x", oracle::random_tensor<double>({3, 2, 3, 3}, rng));
    Param<double> g = make_param("g", oracle::random_tensor<double>({2}, rng, 0.5));
    Param<double> be = make_param("be", oracle::random_tensor<double>({2}, rng));
    TensorD rm = TensorD::zeros({2});
    TensorD rv = TensorD::full({2}, 1.0);
    TensorD proj = projection_like(TensorD::zeros({3, 2, 3, 3}), 2);
    for (bool training : {true, false}) {
      auto f = [&] {
        return sum(elementwise_mul(
            batch_norm2d(x.tensor, g.tensor, be.tensor, rm, rv, training), proj));
      };
      CHECK(grad_check<double>(f, {&x, &g, &be}, opt) <= 1e-4);
    }
  }

  SUBCASE("channel_max_pool with distinct values") {
    Rng rng(112);
    Param<double> x = make_param("x", oracle::random_tensor<double>({1, 8, 2, 2}, rng));
    TensorD proj = projection_like(TensorD::zeros({1, 4, 2, 2}), 3);
    auto f = [&] {
      return sum(elementwise_mul(channel_max_pool(x.tensor, 2), proj));
    };
    CHECK(grad_check<double>(f, {&x}, opt) <= 1e-4);
  }

  SUBCASE("global pools") {
    Rng rng(113);
    Param<double> x = make_param("x", oracle::random_tensor<double>({2, 3, 3, 3}, rng));
    TensorD proj = projection_like(TensorD::zeros({2, 3}), 4);
    auto favg = [&] { return sum(elementwise_mul(global_avg_pool(x.tensor), proj)); };
    CHECK(grad_check<double>(favg, {&x}, opt) <= 1e-4);
    auto fmax = [&] { return sum(elementwise_mul(global_max_pool(x.tensor), proj)); };
    CHECK(grad_check<double>(fmax, {&x}, opt) <= 1e-4);
  }

  SUBCASE("pixel_shuffle and pixel_unshuffle") {
    Rng rng(114);
    Param<double> x = make_param("x", oracle::random_tensor<double>({1, 8, 2, 3}, rng));
    TensorD proj = projection_like(TensorD::zeros({1, 2, 4, 6}), 5);
    auto f = [&] { return sum(elementwise_mul(pixel_shuffle(x.tensor, 2), proj)); };
    CHECK(grad_check<double>(f, {&x}, opt) <= 1e-4);
    Param<double> xu = make_param("xu", oracle::random_tensor<double>({1, 2, 4, 6}, rng));
    TensorD proj2 = projection_like(TensorD::zeros({1, 8, 2, 3}), 6);
    auto g = [&] {
      return sum(elementwise_mul(pixel_unshuffle(xu.tensor, 2), proj2));
    };
    CHECK(grad_check<double>(g, {&xu}, opt) <= 1e-4);
  }

  SUBCASE("softmax, relu, sigmoid, scale_by, bmm, linear, concat") {
    Rng rng(115);
    Param<double> x = make_param("x", oracle::random_tensor<double>({2, 3, 4}, rng));
    TensorD proj = projection_like(TensorD::zeros({2, 3, 4}), 7);
    auto fsoft = [&] { return sum(elementwise_mul(softmax(x.tensor, 2), proj)); };
    CHECK(grad_check<double>(fsoft, {&x}, opt) <= 1e-4);

    Param<double> s = make_param("s", TensorD::full({1}, 0.37));
    auto fscale = [&] {
      return sum(elementwise_mul(scale_by(s.tensor, x.tensor), proj));
    };
    CHECK(grad_check<double>(fscale, {&s, &x}, opt) <= 1e-4);

    auto fact = [&] {
      return sum(elementwise_mul(sigmoid(relu(x.tensor)), proj));
    };
    CHECK(grad_check<double>(fact, {&x}, opt) <= 1e-4);

    Param<double> a = make_param("a", oracle::random_tensor<double>({2, 3, 3}, rng));
    Param<double> b = make_param("b", oracle::random_tensor<double>({2, 3, 3}, rng));
    for (bool ta : {false, true})
      for (bool tb : {false, true}) {
        TensorD pr = projection_like(bmm(a.tensor, b.tensor, ta, tb), 8);
        auto fb = [&] {
          return sum(elementwise_mul(bmm(a.tensor, b.tensor, ta, tb), pr));
        };
        CHECK(grad_check<double>(fb, {&a, &b}, opt) <= 1e-4);
      }

    Param<double> w = make_param("w", oracle::random_tensor<double>({5, 4}, rng));
    Param<double> bias = make_param("bias", oracle::random_tensor<double>({5}, rng));
    Param<double> xin = make_param("xin", oracle::random_tensor<double>({3, 4}, rng));
    TensorD prl = projection_like(TensorD::zeros({3, 5}), 9);
    auto fl = [&] {
      return sum(elementwise_mul(linear(xin.tensor, w.tensor, bias.tensor), prl));
    };
    CHECK(grad_check<double>(fl, {&w, &bias, &xin}, opt) <= 1e-4);

    Param<double> c1 = make_param("c1", oracle::random_tensor<double>({1, 2, 2, 2}, rng));
    Param<double> c2 = make_param("c2", oracle::random_tensor<double>({1, 3, 2, 2}, rng));
    TensorD prc = projection_like(TensorD::zeros({1, 5, 2, 2}), 10);
    auto fc = [&] {
      return sum(elementwise_mul(concat_channels(c1.tensor, c2.tensor), prc));
    };
    CHECK(grad_check<double>(fc, {&c1, &c2}, opt) <= 1e-4);
  }
}

TEST_CASE("adam: zero gradient leaves params unchanged, steps the counter") {
  Rng rng(120);
  Param<double> p = make_param("p", oracle::random_tensor<double>({5}, rng));
  const std::vector<double> before(p.tensor.data().begin(), p.tensor.data().end());
  p.tensor.node()->grad.assign(5, 0.0);
  adam_step<double>({&p}, {0.1, 0.9, 0.999, 1e-8});
  CHECK(p.adam_step == 1);
  CHECK(std::equal(before.begin(), before.end(), p.tensor.data().begin()));
  CHECK(!p.tensor.has_grad());  // gradients cleared after the update
}

TEST_CASE("adam: first step moves by ~lr*sign(g)") {
  Param<double> p = make_param("p", TensorD::from_data({3}, {1.0, -2.0, 0.5}));
  p.tensor.node()->grad = {0.3, -0.7, 2.0};
  adam_step<double>({&p}, {0.05, 0.9, 0.999, 1e-8});
  CHECK(p.tensor.data()[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-6));
  CHECK(p.tensor.data()[1] == doctest::Approx(-2.0 + 0.05).epsilon(1e-6));
  CHECK(p.tensor.data()[2] == doctest::Approx(0.5 - 0.05).epsilon(1e-6));
}

TEST_CASE("adam: missing gradient is an error") {
  Param<double> p = make_param("p", TensorD::full({2}, 1.0));
  CHECK_THROWS_AS(adam_step<double>({&p}, {0.1, 0.9, 0.999, 1e-8}), Error);
}

TEST_CASE("adam: 50 steps shrink |theta - 3| on the quadratic") {
  Param<double> p = make_param("p", TensorD::scalar(-4.0));
  const TensorD three = TensorD::scalar(3.0);
  const double start = std::abs(p.tensor.data()[0] - 3.0);
  for (int i = 0; i < 50; ++i) {
    TensorD d = sub(p.tensor, three);
    TensorD loss = sum(elementwise_mul(d, d));
    loss.backward();
    adam_step<double>({&p}, {0.1, 0.9, 0.999, 1e-8});
  }
  CHECK(std::abs(p.tensor.data()[0] - 3.0) < start);
}
