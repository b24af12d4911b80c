#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ftn/masks.hpp"
#include "oracle_helpers.hpp"

using namespace ftn;

TEST_CASE("gaussian_mask: exact peak at the centre pixel") {
  GaussianMaskSpec spec;
  TensorD gm = gaussian_mask<double>(64, 32, spec);
  CHECK(gm.data()[32 * 32 + 16] == 1.0);
  double best = 0;
  for (double v : gm.data()) best = std::max(best, v);
  CHECK(best == 1.0);

  // Odd sizes get renormalised so the nearest-centre pixel is still 1.
  TensorD odd = gaussian_mask<double>(9, 7, spec);
  double best_odd = 0;
  for (double v : odd.data()) best_odd = std::max(best_odd, v);
  CHECK(best_odd == 1.0);
}

TEST_CASE("gaussian_mask: horizontal mirror symmetry for odd W") {
  GaussianMaskSpec spec;
  spec.center_x = (7 - 1) / 2.0;
  TensorD gm = gaussian_mask<double>(8, 7, spec);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 7; ++x)
      CHECK(gm.data()[y * 7 + x] ==
            doctest::Approx(gm.data()[y * 7 + (6 - x)]).epsilon(1e-12));
}

TEST_CASE("gaussian_mask: value exp(-1/2) one sigma from the centre") {
  GaussianMaskSpec spec;
  spec.sigma_y_frac = 0.25;  // sigma_y = 10 at H=40
  TensorD gm = gaussian_mask<double>(40, 32, spec);
  // centre pixel (20,16); offset (sigma_y, 0) -> (30,16)
  CHECK(gm.data()[30 * 32 + 16] ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("gaussian_mask rejects non-positive sigma") {
  GaussianMaskSpec bad;
  bad.sigma_y_frac = 0.0;
  CHECK_THROWS_AS(gaussian_mask<double>(8, 8, bad), Error);
  CHECK_THROWS_AS(gaussian_mask<double>(0, 8, GaussianMaskSpec{}), Error);
}

TEST_CASE("gaussian_mask is resolution covariant under 2x2 averaging") {
  // The integer-pixel sampling carries a quarter-pixel offset under block
  // averaging, which shrinks with resolution; 0.02 holds from 128x64 up.
  GaussianMaskSpec spec;
  const int H = 128, W = 64;
  TensorD small = gaussian_mask<double>(H, W, spec);
  TensorD big = gaussian_mask<double>(2 * H, 2 * W, spec);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double avg = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          avg += big.data()[(2 * y + dy) * 2 * W + 2 * x + dx];
      avg /= 4;
      CHECK(std::abs(avg - small.data()[y * W + x]) < 0.02);
    }
}

TEST_CASE("attention_to_mask: constant maps become neutral 0.5") {
  TensorD feat = TensorD::full({2, 3, 2, 2}, 1.25);
  TensorD m = attention_to_mask(feat, 4, 4);
  CHECK(m.shape() == std::vector<idx>{2, 4, 4});
  for (double v : m.data()) CHECK(v == 0.5);
  CHECK(!m.requires_grad());
}

TEST_CASE("attention_to_mask: min-max identity and corner preservation") {
  TensorD feat = TensorD::from_data({1, 1, 2, 2}, {0.0, 1.0, 0.0, 1.0});
  TensorD same = attention_to_mask(feat, 2, 2);
  CHECK(same.data()[0] == 0.0);
  CHECK(same.data()[1] == 1.0);
  CHECK(same.data()[2] == 0.0);
  CHECK(same.data()[3] == 1.0);

  TensorD up = attention_to_mask(feat, 4, 4);
  CHECK(up.data()[0] == 0.0);                 // corners preserved
  CHECK(up.data()[3] == 1.0);
  CHECK(up.data()[12] == 0.0);
  CHECK(up.data()[15] == 1.0);
}

TEST_CASE("attention_to_mask matches a loop oracle on random 1x4x2x2") {
  Rng rng(400);
  TensorD feat = oracle::random_tensor<double>({1, 4, 2, 2}, rng);
  const int out_h = 5, out_w = 3;
  TensorD m = attention_to_mask(feat, out_h, out_w);

  // channel mean
  double small[4];
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += feat.data()[c * 4 + i];
    small[i] = s / 4;
  }
  double lo = small[0], hi = small[0];
  for (double v : small) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (auto& v : small) v = (v - lo) / (hi - lo);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const double fy = static_cast<double>(oy) * 1 / (out_h - 1);
      const double fx = static_cast<double>(ox) * 1 / (out_w - 1);
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
      const double wy = fy - y0, wx = fx - x0;
      const double top = small[y0 * 2 + x0] * (1 - wx) + small[y0 * 2 + x1] * wx;
      const double bot = small[y1 * 2 + x0] * (1 - wx) + small[y1 * 2 + x1] * wx;
      const double expect = top * (1 - wy) + bot * wy;
      CHECK(std::abs(m.data()[oy * out_w + ox] - expect) < 1e-6);
    }
}

TEST_CASE("strategy parsing and mask requirements") {
  CHECK(parse_strategy("a") == ReconStrategy::NoCfaGmOnly);
  CHECK(parse_strategy("g") == ReconStrategy::GmPamCam);
  CHECK(strategy_letter(ReconStrategy::GmCam) == 'e');
  CHECK_THROWS_AS(parse_strategy("h"), Error);
  CHECK(!strategy_uses_gradient_loss(ReconStrategy::GmPamCamNoGradLoss));
  CHECK(strategy_uses_gradient_loss(ReconStrategy::GmPamCam));
  CHECK(strategy_needs_pam(ReconStrategy::GmPam));
  CHECK(!strategy_needs_pam(ReconStrategy::GmCam));
  CHECK(strategy_needs_cam(ReconStrategy::GmPamCamNoGradLoss));
}

TEST_CASE("build_target: plain input and all-ones mask are identities") {
  Rng rng(401);
  TensorD img = oracle::random_tensor<double>({2, 3, 4, 4}, rng, 0.2);
  MaskSet<double> masks;
  TensorD t1 = build_target(img, ReconStrategy::PlainInput, masks);
  CHECK(oracle::max_abs_diff(oracle::to_double(t1.data()),
                             oracle::to_double(img.data())) == 0.0);
  CHECK(!t1.requires_grad());

  masks.gm = TensorD::full({4, 4}, 1.0);
  TensorD t2 = build_target(img, ReconStrategy::GmOnly, masks);
  CHECK(oracle::max_abs_diff(oracle::to_double(t2.data()),
                             oracle::to_double(img.data())) == 0.0);
}

TEST_CASE("build_target: per-pixel product verified on a 2x2 image") {
  TensorD img = TensorD::from_data({1, 3, 2, 2},
                                   {0.1, 0.2, 0.3, 0.4,
                                    0.5, 0.6, 0.7, 0.8,
                                    0.9, 1.0, 0.25, 0.75});
  MaskSet<double> masks;
  masks.gm = TensorD::from_data({2, 2}, {1.0, 0.5, 0.25, 0.0});
  masks.pam = TensorD::from_data({1, 2, 2}, {0.5, 1.0, 1.0, 0.5});
  masks.cam = TensorD::from_data({1, 2, 2}, {1.0, 1.0, 0.5, 0.5});
  TensorD t = build_target(img, ReconStrategy::GmPamCam, masks);
  const double m[4] = {1.0 * 0.5 * 1.0, 0.5 * 1.0 * 1.0, 0.25 * 1.0 * 0.5,
                       0.0 * 0.5 * 0.5};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i)
      CHECK(t.data()[c * 4 + i] ==
            doctest::Approx(img.data()[c * 4 + i] * m[i]).epsilon(1e-12));
}

TEST_CASE("build_target: missing masks are rejected") {
  TensorD img = TensorD::full({1, 3, 2, 2}, 0.5);
  MaskSet<double> masks;
  CHECK_THROWS_AS(build_target(img, ReconStrategy::GmOnly, masks), Error);
  masks.gm = TensorD::full({2, 2}, 1.0);
  CHECK_THROWS_AS(build_target(img, ReconStrategy::GmPam, masks), Error);
  CHECK_NOTHROW(build_target(img, ReconStrategy::GmOnly, masks));
}

TEST_CASE("targets never exceed the image for masks in [0,1]") {
  Rng rng(402);
  TensorD img = TensorD::from_data({1, 3, 3, 3}, [&] {
    std::vector<double> v(27);
    for (auto& x : v) x = rng.uniform();
    return v;
  }());
  MaskSet<double> masks;
  masks.gm = gaussian_mask<double>(3, 3, GaussianMaskSpec{});
  masks.pam = TensorD::from_data({1, 3, 3}, [&] {
    std::vector<double> v(9);
    for (auto& x : v) x = rng.uniform();
    return v;
  }());
  TensorD t = build_target(img, ReconStrategy::GmPam, masks);
  for (idx i = 0; i < t.numel(); ++i) {
    CHECK(t.data()[i] >= 0.0);
    CHECK(t.data()[i] <= img.data()[i]);
  }
}
