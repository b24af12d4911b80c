#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

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
}  // namespace

TEST_CASE("cross_entropy: uniform logits give ln(K)") {
  TensorD logits = TensorD::full({3, 7}, 0.42);
  TensorD loss = cross_entropy(logits, {0, 3, 6});
  CHECK(loss.item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy: saturated margin is ~0") {
  std::vector<double> data(5, 0.0);
  data[2] = 100.0;
  TensorD logits = TensorD::from_data({1, 5}, std::move(data));
  CHECK(cross_entropy(logits, {2}).item() < 1e-12);
}

TEST_CASE("cross_entropy matches the direct formula on a random 4x5 case") {
  Rng rng(200);
  TensorD logits = oracle::random_tensor<double>({4, 5}, rng, 2.0);
  std::vector<int> labels{3, 0, 4, 1};
  double expect = 0;
  for (int b = 0; b < 4; ++b) {
    double denom = 0;
    for (int k = 0; k < 5; ++k) denom += std::exp(logits.data()[b * 5 + k]);
    expect += -std::log(std::exp(logits.data()[b * 5 + labels[b]]) / denom);
  }
  expect /= 4;
  CHECK(cross_entropy(logits, labels).item() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("cross_entropy rejects out-of-range labels") {
  TensorD logits = TensorD::zeros({2, 3});
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), Error);
  CHECK_THROWS_AS(cross_entropy(logits, {-1, 0}), Error);
  CHECK_THROWS_AS(cross_entropy(logits, {0}), Error);
}

TEST_CASE("hard_triplet: identical embeddings give exactly the margin") {
  TensorD emb = TensorD::full({4, 3}, 0.8);
  std::vector<int> ids{0, 0, 1, 1};
  CHECK(hard_triplet(emb, ids, 0.3).item() == 0.3);
}

TEST_CASE("hard_triplet: well-separated clusters hinge to zero") {
  // Intra-cluster diameter 0.2, inter-cluster gap ~10.
  TensorD emb = TensorD::from_data({4, 1}, {0.0, 0.2, 10.0, 10.2});
  std::vector<int> ids{0, 0, 1, 1};
  CHECK(hard_triplet(emb, ids, 0.3).item() == 0.0);
}

TEST_CASE("hard_triplet: 1-D example verified by exhaustive enumeration") {
  TensorD emb = TensorD::from_data({4, 1}, {0.0, 0.1, 1.0, 1.2});
  std::vector<int> ids{0, 0, 1, 1};
  // Anchors: hp/hn by enumeration:
  //   a=0: hp=0.1 (to 0.1), hn=1.0 -> max(0, .3+.1-1.0)=0
  //   a=1: hp=0.1, hn=0.9 -> 0
  //   a=2: hp=0.2, hn=0.9 -> 0
  //   a=3: hp=0.2, hn=1.1 -> 0
  CHECK(hard_triplet(emb, ids, 0.3).item() == 0.0);

  // And a case with a live hinge.
  TensorD emb2 = TensorD::from_data({4, 1}, {0.0, 0.5, 0.8, 1.2});
  double expect = 0;
  const std::vector<double> v{0.0, 0.5, 0.8, 1.2};
  for (int a = 0; a < 4; ++a) {
    double hp = 0, hn = 1e9;
    for (int j = 0; j < 4; ++j) {
      const double d = std::abs(v[a] - v[j]);
      if (ids[a] == ids[j])
        hp = std::max(hp, d);
      else
        hn = std::min(hn, d);
    }
    expect += std::max(0.0, 0.3 + hp - hn);
  }
  expect /= 4;
  CHECK(hard_triplet(emb2, ids, 0.3).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("hard_triplet: batch composition errors") {
  TensorD emb = TensorD::full({3, 2}, 1.0);
  CHECK_THROWS_AS(hard_triplet(emb, {0, 0, 0}, 0.3), Error);   // one identity
  CHECK_THROWS_AS(hard_triplet(emb, {0, 0, 1}, 0.3), Error);   // id 1 has 1 row
}

TEST_CASE("hard_triplet: non-negative and translation invariant") {
  Rng rng(201);
  for (int rep = 0; rep < 10; ++rep) {
    TensorD emb = oracle::random_tensor<double>({6, 4}, rng);
    std::vector<int> ids{0, 0, 1, 1, 2, 2};
    const double l1 = hard_triplet(emb, ids, 0.3).item();
    CHECK(l1 >= 0.0);
    TensorD shifted = add(emb, TensorD::full(emb.shape(), 3.7));
    CHECK(hard_triplet(shifted, ids, 0.3).item() ==
          doctest::Approx(l1).epsilon(1e-9));
  }
}

TEST_CASE("image_gradients: constants vanish, formula case, loop oracle") {
  TensorD c = TensorD::full({2, 3, 4, 4}, 0.7);
  auto gm = image_gradients(c);
  for (double v : gm.gh.data()) CHECK(v == 0.0);
  for (double v : gm.gv.data()) CHECK(v == 0.0);

  // Columns 0 and 2 on every channel: each gh entry is 3*(2)^2 = 12.
  std::vector<double> data;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 2; ++y) {
      data.push_back(0.0);
      data.push_back(2.0);
    }
  TensorD img = TensorD::from_data({1, 3, 2, 2}, std::move(data));
  auto g2 = image_gradients(img);
  CHECK(g2.gh.shape() == std::vector<idx>{1, 2, 1});
  CHECK(g2.gv.shape() == std::vector<idx>{1, 1, 2});
  CHECK(g2.gh.data()[0] == 12.0);
  CHECK(g2.gh.data()[1] == 12.0);
  CHECK(g2.gv.data()[0] == 0.0);
  CHECK(g2.gv.data()[1] == 0.0);

  Rng rng(202);
  TensorD x = oracle::random_tensor<double>({1, 3, 3, 3}, rng);
  auto g3 = image_gradients(x);
  auto xd = x.data();
  for (idx y = 0; y < 3; ++y)
    for (idx xx = 0; xx < 2; ++xx) {
      double expect = 0;
      for (idx ch = 0; ch < 3; ++ch) {
        const double d = xd[ch * 9 + y * 3 + xx + 1] - xd[ch * 9 + y * 3 + xx];
        expect += d * d;
      }
      CHECK(g3.gh.data()[y * 2 + xx] == expect);
    }
  for (idx y = 0; y < 2; ++y)
    for (idx xx = 0; xx < 3; ++xx) {
      double expect = 0;
      for (idx ch = 0; ch < 3; ++ch) {
        const double d = xd[ch * 9 + (y + 1) * 3 + xx] - xd[ch * 9 + y * 3 + xx];
        expect += d * d;
      }
      CHECK(g3.gv.data()[y * 3 + xx] == expect);
    }

  CHECK_THROWS_AS(image_gradients(TensorD::zeros({1, 3, 1, 2})), Error);
  // Per-channel variant keeps the channel axis.
  auto g4 = image_gradients(x, /*sum_channels=*/false);
  CHECK(g4.gh.shape() == std::vector<idx>{1, 3, 3, 2});
}

TEST_CASE("gradient_loss: zero on equality, blind to DC offsets") {
  Rng rng(203);
  TensorD x = oracle::random_tensor<double>({2, 3, 4, 3}, rng);
  CHECK(gradient_loss(x, x).item() == 0.0);

  TensorD a = TensorD::full({1, 3, 3, 3}, 0.2);
  TensorD b = TensorD::full({1, 3, 3, 3}, 0.9);
  CHECK(gradient_loss(a, b).item() == 0.0);

  TensorD y = oracle::random_tensor<double>({2, 3, 4, 3}, rng);
  const double base = gradient_loss(x, y).item();
  TensorD y_shift = add(y, TensorD::full(y.shape(), 0.37));
  CHECK(std::abs(gradient_loss(x, y_shift).item() - base) <= 1e-12);
  CHECK(gradient_loss(y, x).item() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("gradient_loss: crafted 1x3x2x2 pair against hand evaluation") {
  TensorD r = TensorD::from_data({1, 3, 2, 2},
                                 {0.0, 1.0, 0.0, 1.0,    // ch0
                                  0.5, 0.5, 0.5, 0.5,    // ch1
                                  0.0, 0.0, 1.0, 1.0});  // ch2
  TensorD g = TensorD::from_data({1, 3, 2, 2},
                                 {0.0, 0.5, 0.0, 0.5,
                                  0.5, 0.5, 0.5, 0.5,
                                  0.0, 0.0, 0.0, 0.0});
  // gh(r): rows both: (1-0)^2 + 0 + 0 = 1 -> entries {1,1}
  // gh(g): (0.5)^2 = 0.25 -> {0.25, 0.25}; |diff| mean = 0.75
  // gv(r): columns: ch2 contributes (1-0)^2 each -> {1,1}; gv(g) = {0,0};
  // |diff| mean = 1.0; total = 1.75
  CHECK(gradient_loss(r, g).item() == doctest::Approx(1.75).epsilon(1e-12));
}

TEST_CASE("l1_loss basics and oracle") {
  Rng rng(204);
  TensorD a = oracle::random_tensor<double>({3, 4}, rng);
  CHECK(l1_loss(a, a).item() == 0.0);
  TensorD b = add(a, TensorD::full(a.shape(), 0.5));
  CHECK(l1_loss(a, b).item() == doctest::Approx(0.5).epsilon(1e-12));
  TensorD c = oracle::random_tensor<double>({3, 4}, rng);
  double expect = 0;
  for (idx i = 0; i < 12; ++i) expect += std::abs(a.data()[i] - c.data()[i]);
  expect /= 12;
  CHECK(l1_loss(a, c).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(l1_loss(a, TensorD::zeros({4, 3})), Error);
}

TEST_CASE("total_loss: weighted combinations and missing parts") {
  LossParts<double> parts;
  parts.ce = TensorD::scalar(2.0);
  parts.triplet = TensorD::scalar(1.0);
  CHECK(total_loss(parts, {1.0, 0.1, 0.0, 0.0}).item() ==
        doctest::Approx(2.1).epsilon(1e-12));

  LossParts<double> recon;
  recon.gradient = TensorD::scalar(0.2);
  recon.l1 = TensorD::scalar(0.3);
  CHECK(total_loss(recon, {0.0, 0.0, 1.0, 1.0}).item() ==
        doctest::Approx(0.5).epsilon(1e-12));

  CHECK(total_loss(LossParts<double>{}, {0, 0, 0, 0}).item() == 0.0);
  CHECK_THROWS_AS(total_loss(LossParts<double>{}, {1.0, 0, 0, 0}), Error);
}

TEST_CASE("losses pass grad_check at 1e-4") {
  GradCheckOptions opt;
  opt.eps = 1e-5;
  Rng rng(205);

  Param<double> logits = make_param("logits", oracle::random_tensor<double>({4, 5}, rng));
  auto fce = [&] { return cross_entropy(logits.tensor, {1, 0, 3, 2}); };
  CHECK(grad_check<double>(fce, {&logits}, opt) <= 1e-4);

  // Tie-free embeddings: distinct random values keep hp/hn picks stable
  // under the +-eps probes.
  Param<double> emb = make_param("emb", oracle::random_tensor<double>({6, 3}, rng));
  std::vector<int> ids{0, 0, 1, 1, 2, 2};
  auto ftrip = [&] { return hard_triplet(emb.tensor, ids, 0.3); };
  CHECK(grad_check<double>(ftrip, {&emb}, opt) <= 1e-4);

  Param<double> recon = make_param("recon", oracle::random_tensor<double>({2, 3, 3, 4}, rng));
  TensorD target = oracle::random_tensor<double>({2, 3, 3, 4}, rng);
  auto fgrad = [&] { return gradient_loss(recon.tensor, target); };
  CHECK(grad_check<double>(fgrad, {&recon}, opt) <= 1e-4);

  auto fl1 = [&] { return l1_loss(recon.tensor, target); };
  CHECK(grad_check<double>(fl1, {&recon}, opt) <= 1e-4);
}
