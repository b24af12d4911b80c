// Times the serial reference kernels against the OpenMP ones on shapes the
// training loop actually hits (decoder 3x3/5x5 convs dominate) and checks
// the two paths agree bitwise.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "ftn/kernels.hpp"
#include "ftn/rng.hpp"

using ftn::kernels::Conv2dDims;

namespace {

double now_sec() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::vector<float> random_vec(std::size_t n, ftn::Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_sec();
    f();
    best = std::min(best, now_sec() - t0);
  }
  return best;
}

struct Row {
  std::string name;
  double serial_ms, omp_ms;
  bool bitwise_equal;
};

Row bench_conv(const std::string& name, int b, int c, int o, int k, int h,
               int w, ftn::Rng& rng) {
  Conv2dDims d;
  d.batch = b;
  d.in_c = c;
  d.in_h = h;
  d.in_w = w;
  d.out_c = o;
  d.k_h = d.k_w = k;
  d.stride = 1;
  d.pad = k / 2;
  d.out_h = h;
  d.out_w = w;
  auto x = random_vec(static_cast<std::size_t>(b) * c * h * w, rng);
  auto wgt = random_vec(static_cast<std::size_t>(o) * c * k * k, rng);
  auto bias = random_vec(static_cast<std::size_t>(o), rng);
  std::vector<float> y_s(static_cast<std::size_t>(b) * o * h * w);
  std::vector<float> y_p(y_s.size());

  const double ts = time_best_of(3, [&] {
    ftn::kernels::conv2d_forward_serial(x.data(), wgt.data(), bias.data(),
                                        y_s.data(), d);
  });
  const double tp = time_best_of(3, [&] {
    ftn::kernels::conv2d_forward_omp(x.data(), wgt.data(), bias.data(),
                                     y_p.data(), d);
  });
  const bool eq =
      std::memcmp(y_s.data(), y_p.data(), y_s.size() * sizeof(float)) == 0;
  return {name, ts * 1e3, tp * 1e3, eq};
}

Row bench_matmul(const std::string& name, int m, int k, int n, ftn::Rng& rng) {
  auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
  auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
  std::vector<float> c_s(static_cast<std::size_t>(m) * n, 0.0f);
  std::vector<float> c_p(c_s.size(), 0.0f);
  const double ts = time_best_of(3, [&] {
    std::fill(c_s.begin(), c_s.end(), 0.0f);
    ftn::kernels::matmul_acc_serial(a.data(), b.data(), c_s.data(), m, k, n,
                                    false, false);
  });
  const double tp = time_best_of(3, [&] {
    std::fill(c_p.begin(), c_p.end(), 0.0f);
    ftn::kernels::matmul_acc_omp(a.data(), b.data(), c_p.data(), m, k, n,
                                 false, false);
  });
  const bool eq =
      std::memcmp(c_s.data(), c_p.data(), c_s.size() * sizeof(float)) == 0;
  return {name, ts * 1e3, tp * 1e3, eq};
}

}  // namespace

int main() {
  ftn::Rng rng(7);
  std::vector<Row> rows;
  rows.push_back(bench_conv("conv3x3 16x32->32 @32x16", 16, 32, 32, 3, 32, 16, rng));
  rows.push_back(bench_conv("conv3x3 16x64->64 @64x32", 16, 64, 64, 3, 64, 32, rng));
  rows.push_back(bench_conv("conv5x5 16x64->32 @32x16", 16, 64, 32, 5, 32, 16, rng));
  rows.push_back(bench_matmul("matmul 512x512x512", 512, 512, 512, rng));
  rows.push_back(bench_matmul("matmul 2048x64x2048", 2048, 64, 2048, rng));

  std::printf("threads: %d\n", ftn::kernels::max_threads());
  std::printf("%-28s %12s %12s %9s %8s\n", "kernel", "serial (ms)",
              "openmp (ms)", "speedup", "bitwise");
  bool all_eq = true;
  for (const auto& r : rows) {
    std::printf("%-28s %12.2f %12.2f %8.2fx %8s\n", r.name.c_str(),
                r.serial_ms, r.omp_ms, r.serial_ms / r.omp_ms,
                r.bitwise_equal ? "equal" : "DIFFER");
    all_eq = all_eq && r.bitwise_equal;
  }
  return all_eq ? 0 : 1;
}
