#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "ftn/cfa.hpp"
#include "ftn/cost.hpp"
#include "oracle_helpers.hpp"

using namespace ftn;

namespace {

// Straight-line reference for the whole CFA forward, materialising every
// intermediate with explicit loops on raw vectors (training-mode batch norm).
struct CfaOracle {
  long B, C, H, W, n, D, N;
  std::vector<double> attended, ca, pa, x_aff, s_aff;

  static std::vector<double> conv1x1(const std::vector<double>& x, long B,
                                     long Cin, long Cout, long HW,
                                     const std::vector<double>& w,
                                     const std::vector<double>& bias) {
    std::vector<double> y(static_cast<size_t>(B * Cout * HW));
    for (long b = 0; b < B; ++b)
      for (long o = 0; o < Cout; ++o)
        for (long i = 0; i < HW; ++i) {
          double acc = bias[static_cast<size_t>(o)];
          for (long c = 0; c < Cin; ++c)
            acc += w[static_cast<size_t>(o * Cin + c)] *
                   x[static_cast<size_t>((b * Cin + c) * HW + i)];
          y[static_cast<size_t>((b * Cout + o) * HW + i)] = acc;
        }
    return y;
  }

  void run(const Cfa<double>& cfa, const std::vector<double>& a_in, long B_,
           long H_, long W_) {
    B = B_;
    H = H_;
    W = W_;
    C = cfa.config().in_channels;
    n = cfa.config().pool_factor;
    D = C / n;
    N = H * W;
    const long HW = N;

    // channel max pool
    std::vector<double> bfeat(static_cast<size_t>(B * D * HW));
    for (long b = 0; b < B; ++b)
      for (long d = 0; d < D; ++d)
        for (long i = 0; i < HW; ++i) {
          double m = a_in[static_cast<size_t>((b * C + d * n) * HW + i)];
          for (long k = 1; k < n; ++k)
            m = std::max(m, a_in[static_cast<size_t>((b * C + d * n + k) * HW + i)]);
          bfeat[static_cast<size_t>((b * D + d) * HW + i)] = m;
        }

    auto wvec = [](const Param<double>* p) {
      return std::vector<double>(p->tensor.data().begin(), p->tensor.data().end());
    };
    std::vector<double> q = conv1x1(bfeat, B, D, D, HW,
                                    wvec(cfa.q_conv.weight), wvec(cfa.q_conv.bias));
    std::vector<double> k = conv1x1(bfeat, B, D, D, HW,
                                    wvec(cfa.k_conv.weight), wvec(cfa.k_conv.bias));
    std::vector<double> v = conv1x1(bfeat, B, D, D, HW,
                                    wvec(cfa.v_conv.weight), wvec(cfa.v_conv.bias));
    q = oracle::relu(oracle::batch_norm(q, {B, D, H, W}, wvec(cfa.q_bn.gamma),
                                        wvec(cfa.q_bn.beta), 1e-5));
    k = oracle::relu(oracle::batch_norm(k, {B, D, H, W}, wvec(cfa.k_bn.gamma),
                                        wvec(cfa.k_bn.beta), 1e-5));

    // X = softmax_rows(Q K^T), S = softmax_rows(K^T Q), per batch element.
    x_aff.assign(static_cast<size_t>(B * D * D), 0.0);
    s_aff.assign(static_cast<size_t>(B * N * N), 0.0);
    ca.assign(static_cast<size_t>(B * D * N), 0.0);
    pa.assign(static_cast<size_t>(B * D * N), 0.0);
    for (long b = 0; b < B; ++b) {
      std::vector<double> qm(q.begin() + b * D * N, q.begin() + (b + 1) * D * N);
      std::vector<double> km(k.begin() + b * D * N, k.begin() + (b + 1) * D * N);
      std::vector<double> vm(v.begin() + b * D * N, v.begin() + (b + 1) * D * N);
      // Q K^T: [D,N] x [N,D]
      std::vector<double> kt(static_cast<size_t>(N * D));
      for (long d = 0; d < D; ++d)
        for (long i = 0; i < N; ++i)
          kt[static_cast<size_t>(i * D + d)] = km[static_cast<size_t>(d * N + i)];
      auto x_raw = oracle::matmul(qm, kt, D, N, D);
      auto x_soft = oracle::softmax_rows(x_raw, D, D);
      std::copy(x_soft.begin(), x_soft.end(), x_aff.begin() + b * D * D);
      // K^T Q: [N,D] x [D,N]
      auto s_raw = oracle::matmul(kt, qm, N, D, N);
      auto s_soft = oracle::softmax_rows(s_raw, N, N);
      std::copy(s_soft.begin(), s_soft.end(), s_aff.begin() + b * N * N);
      // CA = X V
      auto ca_b = oracle::matmul(x_soft, vm, D, D, N);
      std::copy(ca_b.begin(), ca_b.end(), ca.begin() + b * D * N);
      // PA = V S^T
      std::vector<double> st(static_cast<size_t>(N * N));
      for (long i = 0; i < N; ++i)
        for (long j = 0; j < N; ++j)
          st[static_cast<size_t>(j * N + i)] = s_soft[static_cast<size_t>(i * N + j)];
      auto pa_b = oracle::matmul(vm, st, D, N, N);
      std::copy(pa_b.begin(), pa_b.end(), pa.begin() + b * D * N);
    }

    const double gamma = cfa.gamma->tensor.data()[0];
    const double phi = cfa.phi->tensor.data()[0];
    std::vector<double> fused(bfeat.size());
    for (size_t i = 0; i < fused.size(); ++i)
      fused[i] = gamma * ca[i] + phi * pa[i] + bfeat[i];
    fused = oracle::batch_norm(fused, {B, D, H, W}, wvec(cfa.fuse_bn.gamma),
                               wvec(cfa.fuse_bn.beta), 1e-5);
    attended = conv1x1(fused, B, D, C, HW, wvec(cfa.recover.weight),
                       wvec(cfa.recover.bias));
  }
};

}  // namespace

TEST_CASE("cfa_forward: shape contract on 2x64x8x4 with n=2") {
  Rng rng(300);
  Cfa<double> cfa({64, 2}, rng);
  TensorD a = oracle::random_tensor<double>({2, 64, 8, 4}, rng);
  auto out = cfa.forward(a, true);
  CHECK(out.channel_affinity.shape() == std::vector<idx>{2, 32, 32});
  CHECK(out.position_affinity.shape() == std::vector<idx>{2, 32, 32});
  CHECK(out.attended.shape() == std::vector<idx>{2, 64, 8, 4});
  CHECK(out.ca_map.shape() == std::vector<idx>{2, 32, 8, 4});
  CHECK(out.pa_map.shape() == std::vector<idx>{2, 32, 8, 4});
}

TEST_CASE("cfa affinity rows sum to 1 on random inputs") {
  Rng rng(301);
  Cfa<double> cfa({8, 2}, rng);
  TensorD a = oracle::random_tensor<double>({3, 8, 2, 3}, rng);
  auto out = cfa.forward(a, true);
  const idx D = 4, N = 6;
  for (idx b = 0; b < 3; ++b) {
    for (idx r = 0; r < D; ++r) {
      double s = 0;
      for (idx c = 0; c < D; ++c)
        s += out.channel_affinity.data()[(b * D + r) * D + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    for (idx r = 0; r < N; ++r) {
      double s = 0;
      for (idx c = 0; c < N; ++c)
        s += out.position_affinity.data()[(b * N + r) * N + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("with zero attention weights the output ignores Q/K/V entirely") {
  Rng rng(302);
  Cfa<double> cfa({8, 2}, rng);
  TensorD a = oracle::random_tensor<double>({2, 8, 2, 2}, rng);
  auto before = cfa.forward(a, true);

  // Perturb every Q/K/V weight; gamma = phi = 0 must hide it.
  for (auto* p : cfa.params()) {
    if (p->name.find("q_conv") != std::string::npos ||
        p->name.find("k_conv") != std::string::npos ||
        p->name.find("v_conv") != std::string::npos)
      for (auto& v : p->tensor.data()) v += 0.731;
  }
  auto after = cfa.forward(a, true);
  CHECK(std::memcmp(before.attended.data().data(), after.attended.data().data(),
                    sizeof(double) * static_cast<size_t>(before.attended.numel())) == 0);

  // And the analytic gradients of those weights are exactly zero.
  TensorD proj = oracle::random_tensor<double>({2, 8, 2, 2}, rng);
  auto out = cfa.forward(a, true);
  sum(elementwise_mul(out.attended, proj)).backward();
  for (auto* p : cfa.params()) {
    const bool qkv = p->name.find("q_conv") != std::string::npos ||
                     p->name.find("k_conv") != std::string::npos ||
                     p->name.find("v_conv") != std::string::npos;
    if (!qkv) continue;
    REQUIRE(p->tensor.has_grad());
    for (double g : p->tensor.grad()) CHECK(g == 0.0);
  }
  // gamma and phi do receive gradient signal.
  REQUIRE(cfa.gamma->tensor.has_grad());
  bool nonzero = false;
  for (double g : cfa.gamma->tensor.grad()) nonzero |= g != 0.0;
  CHECK(nonzero);
}

TEST_CASE("cfa_forward matches the straight-line loop oracle (C=8, n=2, 2x2)") {
  Rng rng(303);
  Cfa<double> cfa({8, 2}, rng);
  // Non-trivial fusion weights.
  cfa.gamma->tensor.data()[0] = 0.3;
  cfa.phi->tensor.data()[0] = -0.2;
  TensorD a = oracle::random_tensor<double>({2, 8, 2, 2}, rng);
  auto out = cfa.forward(a, true);

  CfaOracle ref;
  ref.run(cfa, oracle::to_double(a.data()), 2, 2, 2);
  CHECK(oracle::max_abs_diff(oracle::to_double(out.attended.data()), ref.attended) < 1e-10);
  CHECK(oracle::max_abs_diff(oracle::to_double(out.ca_map.data()), ref.ca) < 1e-10);
  CHECK(oracle::max_abs_diff(oracle::to_double(out.pa_map.data()), ref.pa) < 1e-10);
  CHECK(oracle::max_abs_diff(oracle::to_double(out.channel_affinity.data()), ref.x_aff) < 1e-10);
  CHECK(oracle::max_abs_diff(oracle::to_double(out.position_affinity.data()), ref.s_aff) < 1e-10);
}

TEST_CASE("cfa_forward passes grad_check including gamma and phi") {
  Rng rng(304);
  Cfa<double> cfa({8, 2}, rng);
  cfa.gamma->tensor.data()[0] = 0.25;
  cfa.phi->tensor.data()[0] = -0.15;
  TensorD a = oracle::random_tensor<double>({1, 8, 2, 2}, rng);
  TensorD proj = oracle::random_tensor<double>({1, 8, 2, 2}, rng);
  auto f = [&] {
    return sum(elementwise_mul(cfa.forward(a, true).attended, proj));
  };
  GradCheckOptions opt;
  opt.eps = 1e-5;
  CHECK(grad_check<double>(f, cfa.params(), opt) <= 1e-4);
}

TEST_CASE("cfa rejects channel counts the pool factor cannot divide") {
  Rng rng(305);
  CHECK_THROWS_AS(Cfa<double>({9, 2}, rng), Error);
  Cfa<double> cfa({8, 2}, rng);
  TensorD wrong = TensorD::zeros({1, 6, 2, 2});
  CHECK_THROWS_AS(cfa.forward(wrong, true), Error);
}

TEST_CASE("pam_cam: zero attention scalars reduce to the conv-only path") {
  Rng rng(306);
  PamCam<double> pc(16, rng);
  TensorD a = oracle::random_tensor<double>({1, 16, 4, 3}, rng);
  auto before = pc.forward(a, true);
  for (auto* p : pc.params()) {
    if (p->name.find("q_conv") != std::string::npos ||
        p->name.find("k_conv") != std::string::npos ||
        p->name.find("v_conv") != std::string::npos)
      for (auto& v : p->tensor.data()) v -= 0.311;
  }
  auto after = pc.forward(a, true);
  CHECK(std::memcmp(before.data().data(), after.data().data(),
                    sizeof(double) * static_cast<size_t>(before.numel())) == 0);
  CHECK(before.shape() == std::vector<idx>{1, 16, 4, 3});
}

TEST_CASE("pam_cam preserves shape on 1x64x8x4") {
  Rng rng(307);
  PamCam<double> pc(64, rng);
  TensorD a = oracle::random_tensor<double>({1, 64, 8, 4}, rng);
  CHECK(pc.forward(a, true).shape() == a.shape());
}

TEST_CASE("count_params: single 1x1 conv anchor") {
  // 512*512 weights + 512 biases
  CostModel m;
  m.module = "probe";
  m.input_shape = {512, 16, 8};
  m.layers = {{"conv", 512 * 512 + 512, 0}};
  CHECK(count_params(m) == 262656);
}

TEST_CASE("count_flops: conv and matmul formulas") {
  CostModel conv = cfa_cost(1024, 2, 16, 8);
  // 1x1 conv 512->512 on a 16x8 map: 512*512*128 mult-adds.
  bool found = false;
  for (const auto& l : conv.layers)
    if (l.kind == "q_conv 1x1") {
      CHECK(l.mult_adds == 512LL * 512 * 128);
      found = true;
    }
  CHECK(found);
  CostModel mm;
  mm.layers = {{"matmul", 0, 512LL * 512 * 128}};
  CHECK(count_flops(mm) == 512LL * 512 * 128);
}

TEST_CASE("cost counters agree exactly with the real modules") {
  Rng rng(308);
  for (int c : {16, 64}) {
    Cfa<double> cfa({c, 2}, rng);
    std::int64_t actual = 0;
    for (auto* p : cfa.params()) actual += p->tensor.numel();
    CHECK(cfa_cost(c, 2, 8, 4).params() == actual);

    PamCam<double> pc(c, rng);
    std::int64_t actual_pc = 0;
    for (auto* p : pc.params()) actual_pc += p->tensor.numel();
    CHECK(pamcam_cost(c, 8, 4).params() == actual_pc);
  }
}

TEST_CASE("CFA stays far cheaper than PAM-CAM at every width") {
  for (int c : {64, 256, 1024})
    CHECK(cfa_cost(c, 2, 16, 8).params() < pamcam_cost(c, 16, 8).params());
}

TEST_CASE("CFA at C=1024 lands in the documented parameter band") {
  const auto cfa = cfa_cost(1024, 2, 16, 8);
  CHECK(cfa.params() >= 1'100'000);
  CHECK(cfa.params() <= 1'500'000);
  const auto pc = pamcam_cost(1024, 16, 8);
  const double ratio = static_cast<double>(cfa.params()) /
                       static_cast<double>(pc.params());
  CHECK(ratio <= 0.20);
}
