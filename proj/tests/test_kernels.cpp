#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "ftn/kernels.hpp"
#include "ftn/rng.hpp"
#include "oracle_helpers.hpp"

using namespace ftn;
using kernels::Conv2dDims;

namespace {

Conv2dDims make_dims(long b, long c, long o, long k, long h, long w,
                     long stride, long pad) {
  Conv2dDims d;
  d.batch = b;
  d.in_c = c;
  d.in_h = h;
  d.in_w = w;
  d.out_c = o;
  d.k_h = d.k_w = k;
  d.stride = stride;
  d.pad = pad;
  d.out_h = (h + 2 * pad - k) / stride + 1;
  d.out_w = (w + 2 * pad - k) / stride + 1;
  return d;
}

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("conv2d forward matches the six-loop oracle") {
  Rng rng(11);
  for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}, {2, 0}, {1, 2}}) {
    const auto d = make_dims(2, 3, 4, 3, 7, 5, stride, pad);
    auto x = oracle::random_vec(static_cast<size_t>(d.batch * d.in_c * d.in_h * d.in_w), rng);
    auto w = oracle::random_vec(static_cast<size_t>(d.out_c * d.in_c * 9), rng);
    auto b = oracle::random_vec(static_cast<size_t>(d.out_c), rng);
    std::vector<double> y(static_cast<size_t>(d.batch * d.out_c * d.out_h * d.out_w));
    kernels::conv2d_forward_serial(x.data(), w.data(), b.data(), y.data(), d);
    long oh, ow;
    auto ref = oracle::conv2d(x, {d.batch, d.in_c, d.in_h, d.in_w}, w, d.out_c,
                              3, 3, b, stride, pad, oh, ow);
    REQUIRE(oh == d.out_h);
    REQUIRE(ow == d.out_w);
    CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
  }
}

TEST_CASE("serial and OpenMP conv kernels agree bitwise") {
  Rng rng(22);
  for (auto [stride, pad, k] :
       {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 2, 5}, {2, 0, 1}}) {
    const auto d = make_dims(3, 5, 4, k, 9, 6, stride, pad);
    const size_t nx = static_cast<size_t>(d.batch * d.in_c * d.in_h * d.in_w);
    const size_t nw = static_cast<size_t>(d.out_c * d.in_c * k * k);
    const size_t ny = static_cast<size_t>(d.batch * d.out_c * d.out_h * d.out_w);
    std::vector<float> x(nx), w(nw), b(static_cast<size_t>(d.out_c));
    for (auto& v : x) v = static_cast<float>(rng.normal());
    for (auto& v : w) v = static_cast<float>(rng.normal());
    for (auto& v : b) v = static_cast<float>(rng.normal());

    std::vector<float> ys(ny), yp(ny);
    kernels::conv2d_forward_serial(x.data(), w.data(), b.data(), ys.data(), d);
    kernels::conv2d_forward_omp(x.data(), w.data(), b.data(), yp.data(), d);
    CHECK(bitwise_equal(ys, yp));

    std::vector<float> dy(ny);
    for (auto& v : dy) v = static_cast<float>(rng.normal());
    std::vector<float> dxs(nx, 0.0f), dxp(nx, 0.0f);
    kernels::conv2d_backward_x_serial(dy.data(), w.data(), dxs.data(), d);
    kernels::conv2d_backward_x_omp(dy.data(), w.data(), dxp.data(), d);
    CHECK(bitwise_equal(dxs, dxp));

    std::vector<float> dws(nw, 0.0f), dwp(nw, 0.0f);
    kernels::conv2d_backward_w_serial(dy.data(), x.data(), dws.data(), d);
    kernels::conv2d_backward_w_omp(dy.data(), x.data(), dwp.data(), d);
    CHECK(bitwise_equal(dws, dwp));
  }
}

TEST_CASE("serial and OpenMP matmul/bmm agree bitwise for all transposes") {
  Rng rng(33);
  const long m = 17, k = 9, n = 13, batch = 4;
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      std::vector<float> a(static_cast<size_t>(batch * m * k));
      std::vector<float> b(static_cast<size_t>(batch * k * n));
      for (auto& v : a) v = static_cast<float>(rng.normal());
      for (auto& v : b) v = static_cast<float>(rng.normal());
      std::vector<float> cs(static_cast<size_t>(batch * m * n), 0.0f);
      std::vector<float> cp(cs.size(), 0.0f);
      kernels::bmm_acc_serial(a.data(), b.data(), cs.data(), batch, m, k, n,
                              ta, tb);
      kernels::bmm_acc_omp(a.data(), b.data(), cp.data(), batch, m, k, n, ta,
                           tb);
      CHECK(bitwise_equal(cs, cp));
    }
}

TEST_CASE("matmul kernel agrees with the triple-loop oracle (transposes)") {
  Rng rng(44);
  const long m = 6, k = 5, n = 7;
  auto a = oracle::random_vec(static_cast<size_t>(m * k), rng);
  auto b = oracle::random_vec(static_cast<size_t>(k * n), rng);
  auto ref = oracle::matmul(a, b, m, k, n);

  // Stored transposed operands must produce the same mathematical product.
  std::vector<double> at(static_cast<size_t>(k * m)), bt(static_cast<size_t>(n * k));
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < k; ++j)
      at[static_cast<size_t>(j * m + i)] = a[static_cast<size_t>(i * k + j)];
  for (long i = 0; i < k; ++i)
    for (long j = 0; j < n; ++j)
      bt[static_cast<size_t>(j * k + i)] = b[static_cast<size_t>(i * n + j)];

  for (auto [ta, tb] : {std::pair{false, false}, {true, false}, {false, true},
                        {true, true}}) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    kernels::matmul_acc(ta ? at.data() : a.data(), tb ? bt.data() : b.data(),
                        c.data(), m, k, n, ta, tb);
    CHECK(oracle::max_abs_diff(c, ref) < 1e-12);
  }
}

TEST_CASE("parallel toggle is honoured and results match") {
  Rng rng(55);
  const auto d = make_dims(2, 4, 4, 3, 8, 8, 1, 1);
  const size_t nx = static_cast<size_t>(d.batch * d.in_c * d.in_h * d.in_w);
  std::vector<float> x(nx), w(static_cast<size_t>(d.out_c * d.in_c * 9)),
      b(static_cast<size_t>(d.out_c));
  for (auto& v : x) v = static_cast<float>(rng.normal());
  for (auto& v : w) v = static_cast<float>(rng.normal());
  for (auto& v : b) v = static_cast<float>(rng.normal());
  std::vector<float> y1(static_cast<size_t>(d.batch * d.out_c * d.out_h * d.out_w));
  std::vector<float> y2(y1.size());
  const bool was = kernels::parallel_enabled();
  kernels::set_parallel(false);
  kernels::conv2d_forward(x.data(), w.data(), b.data(), y1.data(), d);
  kernels::set_parallel(true);
  kernels::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), d);
  kernels::set_parallel(was);
  CHECK(bitwise_equal(y1, y2));
}
