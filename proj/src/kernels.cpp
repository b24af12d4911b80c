#include "ftn/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ftn::kernels {

namespace {
#ifdef _OPENMP
bool g_parallel = true;
#else
bool g_parallel = false;
#endif
}  // namespace

void set_parallel(bool on) {
#ifdef _OPENMP
  g_parallel = on;
#else
  (void)on;
  g_parallel = false;
#endif
}

bool parallel_enabled() { return g_parallel; }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

using i64 = std::int64_t;

// ---------------------------------------------------------------------------
// conv2d forward

template <typename T>
void conv2d_forward_serial(const T* x, const T* w, const T* bias, T* y,
                           const Conv2dDims& d) {
  for (i64 b = 0; b < d.batch; ++b) {
    for (i64 o = 0; o < d.out_c; ++o) {
      T* yp = y + ((b * d.out_c + o) * d.out_h) * d.out_w;
      const T bv = bias ? bias[o] : T(0);
      for (i64 p = 0; p < d.out_h * d.out_w; ++p) yp[p] = bv;
      for (i64 c = 0; c < d.in_c; ++c) {
        const T* xp = x + ((b * d.in_c + c) * d.in_h) * d.in_w;
        const T* wp = w + ((o * d.in_c + c) * d.k_h) * d.k_w;
        for (i64 i = 0; i < d.k_h; ++i) {
          for (i64 j = 0; j < d.k_w; ++j) {
            const T wv = wp[i * d.k_w + j];
            for (i64 oy = 0; oy < d.out_h; ++oy) {
              const i64 iy = oy * d.stride - d.pad + i;
              if (iy < 0 || iy >= d.in_h) continue;
              const T* xrow = xp + iy * d.in_w;
              T* yrow = yp + oy * d.out_w;
              for (i64 ox = 0; ox < d.out_w; ++ox) {
                const i64 ix = ox * d.stride - d.pad + j;
                if (ix < 0 || ix >= d.in_w) continue;
                yrow[ox] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }
}

namespace {
// First/last valid output index along one axis for kernel offset k:
// 0 <= out*stride - pad + k < extent.
inline i64 valid_lo(i64 k, i64 pad, i64 stride) {
  const i64 t = pad - k;
  return t <= 0 ? 0 : (t + stride - 1) / stride;
}
inline i64 valid_hi(i64 k, i64 pad, i64 stride, i64 extent, i64 out_extent) {
  const i64 t = extent - 1 + pad - k;
  if (t < 0) return 0;
  return std::min(out_extent, t / stride + 1);
}
}  // namespace

// Same per-output-element accumulation order (c, i, j) as the serial
// reference, but with the valid ranges hoisted so the inner loop is
// branch-free and vectorises.
template <typename T>
void conv2d_forward_omp(const T* x, const T* w, const T* bias, T* y,
                        const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 b = 0; b < d.batch; ++b) {
    for (i64 o = 0; o < d.out_c; ++o) {
      T* yp = y + ((b * d.out_c + o) * d.out_h) * d.out_w;
      const T bv = bias ? bias[o] : T(0);
      for (i64 p = 0; p < d.out_h * d.out_w; ++p) yp[p] = bv;
      for (i64 c = 0; c < d.in_c; ++c) {
        const T* xp = x + ((b * d.in_c + c) * d.in_h) * d.in_w;
        const T* wp = w + ((o * d.in_c + c) * d.k_h) * d.k_w;
        for (i64 i = 0; i < d.k_h; ++i) {
          const i64 oy_lo = valid_lo(i, d.pad, d.stride);
          const i64 oy_hi = valid_hi(i, d.pad, d.stride, d.in_h, d.out_h);
          for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
            const i64 iy = oy * d.stride - d.pad + i;
            const T* xrow = xp + iy * d.in_w;
            T* yrow = yp + oy * d.out_w;
            for (i64 j = 0; j < d.k_w; ++j) {
              const T wv = wp[i * d.k_w + j];
              const i64 lo = valid_lo(j, d.pad, d.stride);
              const i64 hi = valid_hi(j, d.pad, d.stride, d.in_w, d.out_w);
              if (d.stride == 1) {
                const T* __restrict xv = xrow - d.pad + j;
                T* __restrict yv = yrow;
                for (i64 ox = lo; ox < hi; ++ox) yv[ox] += wv * xv[ox];
              } else {
                for (i64 ox = lo; ox < hi; ++ox)
                  yrow[ox] += wv * xrow[ox * d.stride - d.pad + j];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y,
                    const Conv2dDims& d) {
  if (g_parallel)
    conv2d_forward_omp(x, w, bias, y, d);
  else
    conv2d_forward_serial(x, w, bias, y, d);
}

// ---------------------------------------------------------------------------
// conv2d backward w.r.t. input (gather form, one writer per element)

namespace {
template <typename T>
inline void conv2d_bx_plane(const T* dy, const T* w, T* dx, const Conv2dDims& d,
                            i64 b, i64 c) {
  T* dxp = dx + ((b * d.in_c + c) * d.in_h) * d.in_w;
  for (i64 h = 0; h < d.in_h; ++h) {
    for (i64 wx = 0; wx < d.in_w; ++wx) {
      T acc = 0;
      for (i64 o = 0; o < d.out_c; ++o) {
        const T* dyp = dy + ((b * d.out_c + o) * d.out_h) * d.out_w;
        const T* wp = w + ((o * d.in_c + c) * d.k_h) * d.k_w;
        for (i64 i = 0; i < d.k_h; ++i) {
          const i64 ty = h + d.pad - i;
          if (ty < 0 || ty % d.stride != 0) continue;
          const i64 oy = ty / d.stride;
          if (oy >= d.out_h) continue;
          for (i64 j = 0; j < d.k_w; ++j) {
            const i64 tx = wx + d.pad - j;
            if (tx < 0 || tx % d.stride != 0) continue;
            const i64 ox = tx / d.stride;
            if (ox >= d.out_w) continue;
            acc += wp[i * d.k_w + j] * dyp[oy * d.out_w + ox];
          }
        }
      }
      dxp[h * d.in_w + wx] += acc;
    }
  }
}
}  // namespace

template <typename T>
void conv2d_backward_x_serial(const T* dy, const T* w, T* dx,
                              const Conv2dDims& d) {
  for (i64 b = 0; b < d.batch; ++b)
    for (i64 c = 0; c < d.in_c; ++c) conv2d_bx_plane(dy, w, dx, d, b, c);
}

// Scatter within one (b,c) plane; planes are disjoint across threads and
// each dx element still accumulates its (o,i,j) terms in the serial gather
// order, so the result is bitwise identical to the reference.
template <typename T>
void conv2d_backward_x_omp(const T* dy, const T* w, T* dx,
                           const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 b = 0; b < d.batch; ++b) {
    for (i64 c = 0; c < d.in_c; ++c) {
      T* dxp = dx + ((b * d.in_c + c) * d.in_h) * d.in_w;
      for (i64 o = 0; o < d.out_c; ++o) {
        const T* dyp = dy + ((b * d.out_c + o) * d.out_h) * d.out_w;
        const T* wp = w + ((o * d.in_c + c) * d.k_h) * d.k_w;
        for (i64 i = 0; i < d.k_h; ++i) {
          const i64 oy_lo = valid_lo(i, d.pad, d.stride);
          const i64 oy_hi = valid_hi(i, d.pad, d.stride, d.in_h, d.out_h);
          for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
            const i64 iy = oy * d.stride - d.pad + i;
            T* dxrow = dxp + iy * d.in_w;
            const T* dyrow = dyp + oy * d.out_w;
            for (i64 j = 0; j < d.k_w; ++j) {
              const T wv = wp[i * d.k_w + j];
              const i64 lo = valid_lo(j, d.pad, d.stride);
              const i64 hi = valid_hi(j, d.pad, d.stride, d.in_w, d.out_w);
              if (d.stride == 1) {
                T* __restrict dv = dxrow - d.pad + j;
                const T* __restrict gv = dyrow;
                for (i64 ox = lo; ox < hi; ++ox) dv[ox] += wv * gv[ox];
              } else {
                for (i64 ox = lo; ox < hi; ++ox)
                  dxrow[ox * d.stride - d.pad + j] += wv * dyrow[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_x(const T* dy, const T* w, T* dx, const Conv2dDims& d) {
  if (g_parallel)
    conv2d_backward_x_omp(dy, w, dx, d);
  else
    conv2d_backward_x_serial(dy, w, dx, d);
}

// ---------------------------------------------------------------------------
// conv2d backward w.r.t. weights

namespace {
template <typename T>
inline void conv2d_bw_filter(const T* dy, const T* x, T* dw,
                             const Conv2dDims& d, i64 o, i64 c) {
  T* dwp = dw + ((o * d.in_c + c) * d.k_h) * d.k_w;
  for (i64 i = 0; i < d.k_h; ++i) {
    for (i64 j = 0; j < d.k_w; ++j) {
      T acc = 0;
      for (i64 b = 0; b < d.batch; ++b) {
        const T* dyp = dy + ((b * d.out_c + o) * d.out_h) * d.out_w;
        const T* xp = x + ((b * d.in_c + c) * d.in_h) * d.in_w;
        for (i64 oy = 0; oy < d.out_h; ++oy) {
          const i64 iy = oy * d.stride - d.pad + i;
          if (iy < 0 || iy >= d.in_h) continue;
          const T* xrow = xp + iy * d.in_w;
          const T* dyrow = dyp + oy * d.out_w;
          for (i64 ox = 0; ox < d.out_w; ++ox) {
            const i64 ix = ox * d.stride - d.pad + j;
            if (ix < 0 || ix >= d.in_w) continue;
            acc += dyrow[ox] * xrow[ix];
          }
        }
      }
      dwp[i * d.k_w + j] += acc;
    }
  }
}
}  // namespace

template <typename T>
void conv2d_backward_w_serial(const T* dy, const T* x, T* dw,
                              const Conv2dDims& d) {
  for (i64 o = 0; o < d.out_c; ++o)
    for (i64 c = 0; c < d.in_c; ++c) conv2d_bw_filter(dy, x, dw, d, o, c);
}

template <typename T>
void conv2d_backward_w_omp(const T* dy, const T* x, T* dw,
                           const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 o = 0; o < d.out_c; ++o) {
    for (i64 c = 0; c < d.in_c; ++c) {
      T* dwp = dw + ((o * d.in_c + c) * d.k_h) * d.k_w;
      for (i64 i = 0; i < d.k_h; ++i) {
        for (i64 j = 0; j < d.k_w; ++j) {
          const i64 lo = valid_lo(j, d.pad, d.stride);
          const i64 hi = valid_hi(j, d.pad, d.stride, d.in_w, d.out_w);
          const i64 oy_lo = valid_lo(i, d.pad, d.stride);
          const i64 oy_hi = valid_hi(i, d.pad, d.stride, d.in_h, d.out_h);
          T acc = 0;
          for (i64 b = 0; b < d.batch; ++b) {
            const T* dyp = dy + ((b * d.out_c + o) * d.out_h) * d.out_w;
            const T* xp = x + ((b * d.in_c + c) * d.in_h) * d.in_w;
            for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
              const i64 iy = oy * d.stride - d.pad + i;
              const T* xrow = xp + iy * d.in_w;
              const T* dyrow = dyp + oy * d.out_w;
              if (d.stride == 1) {
                const T* __restrict xv = xrow - d.pad + j;
                const T* __restrict gv = dyrow;
                for (i64 ox = lo; ox < hi; ++ox) acc += gv[ox] * xv[ox];
              } else {
                for (i64 ox = lo; ox < hi; ++ox)
                  acc += dyrow[ox] * xrow[ox * d.stride - d.pad + j];
              }
            }
          }
          dwp[i * d.k_w + j] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_w(const T* dy, const T* x, T* dw, const Conv2dDims& d) {
  if (g_parallel)
    conv2d_backward_w_omp(dy, x, dw, d);
  else
    conv2d_backward_w_serial(dy, x, dw, d);
}

template <typename T>
void conv2d_backward_b(const T* dy, T* db, const Conv2dDims& d) {
  for (i64 o = 0; o < d.out_c; ++o) {
    T acc = 0;
    for (i64 b = 0; b < d.batch; ++b) {
      const T* dyp = dy + ((b * d.out_c + o) * d.out_h) * d.out_w;
      for (i64 p = 0; p < d.out_h * d.out_w; ++p) acc += dyp[p];
    }
    db[o] += acc;
  }
}

// ---------------------------------------------------------------------------
// matmul

namespace {
// One output row; accumulation over k ascending regardless of transposes so
// serial and parallel agree bitwise.
template <typename T>
inline void matmul_row(const T* a, const T* b, T* c, i64 m_idx, i64 k, i64 n,
                       i64 m, bool ta, bool tb) {
  T* __restrict crow = c + m_idx * n;
  for (i64 kk = 0; kk < k; ++kk) {
    const T av = ta ? a[kk * m + m_idx] : a[m_idx * k + kk];
    if (!tb) {
      const T* __restrict brow = b + kk * n;
      for (i64 nn = 0; nn < n; ++nn) crow[nn] += av * brow[nn];
    } else {
      for (i64 nn = 0; nn < n; ++nn) crow[nn] += av * b[nn * k + kk];
    }
  }
}
}  // namespace

template <typename T>
void matmul_acc_serial(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
                       bool ta, bool tb) {
  for (i64 mi = 0; mi < m; ++mi) matmul_row(a, b, c, mi, k, n, m, ta, tb);
}

template <typename T>
void matmul_acc_omp(const T* a, const T* b, T* c, i64 m, i64 k, i64 n, bool ta,
                    bool tb) {
#pragma omp parallel for schedule(static)
  for (i64 mi = 0; mi < m; ++mi) matmul_row(a, b, c, mi, k, n, m, ta, tb);
}

template <typename T>
void matmul_acc(const T* a, const T* b, T* c, i64 m, i64 k, i64 n, bool ta,
                bool tb) {
  if (g_parallel)
    matmul_acc_omp(a, b, c, m, k, n, ta, tb);
  else
    matmul_acc_serial(a, b, c, m, k, n, ta, tb);
}

template <typename T>
void bmm_acc_serial(const T* a, const T* b, T* c, i64 batch, i64 m, i64 k,
                    i64 n, bool ta, bool tb) {
  for (i64 bb = 0; bb < batch; ++bb)
    for (i64 mi = 0; mi < m; ++mi)
      matmul_row(a + bb * m * k, b + bb * k * n, c + bb * m * n, mi, k, n, m,
                 ta, tb);
}

template <typename T>
void bmm_acc_omp(const T* a, const T* b, T* c, i64 batch, i64 m, i64 k, i64 n,
                 bool ta, bool tb) {
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 bb = 0; bb < batch; ++bb)
    for (i64 mi = 0; mi < m; ++mi)
      matmul_row(a + bb * m * k, b + bb * k * n, c + bb * m * n, mi, k, n, m,
                 ta, tb);
}

template <typename T>
void bmm_acc(const T* a, const T* b, T* c, i64 batch, i64 m, i64 k, i64 n,
             bool ta, bool tb) {
  if (g_parallel)
    bmm_acc_omp(a, b, c, batch, m, k, n, ta, tb);
  else
    bmm_acc_serial(a, b, c, batch, m, k, n, ta, tb);
}

#define FTN_INSTANTIATE_KERNELS(T)                                            \
  template void conv2d_forward_serial<T>(const T*, const T*, const T*, T*,    \
                                         const Conv2dDims&);                  \
  template void conv2d_forward_omp<T>(const T*, const T*, const T*, T*,       \
                                      const Conv2dDims&);                     \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*,           \
                                  const Conv2dDims&);                         \
  template void conv2d_backward_x_serial<T>(const T*, const T*, T*,           \
                                            const Conv2dDims&);               \
  template void conv2d_backward_x_omp<T>(const T*, const T*, T*,              \
                                         const Conv2dDims&);                  \
  template void conv2d_backward_x<T>(const T*, const T*, T*,                  \
                                     const Conv2dDims&);                      \
  template void conv2d_backward_w_serial<T>(const T*, const T*, T*,           \
                                            const Conv2dDims&);               \
  template void conv2d_backward_w_omp<T>(const T*, const T*, T*,              \
                                         const Conv2dDims&);                  \
  template void conv2d_backward_w<T>(const T*, const T*, T*,                  \
                                     const Conv2dDims&);                      \
  template void conv2d_backward_b<T>(const T*, T*, const Conv2dDims&);        \
  template void matmul_acc_serial<T>(const T*, const T*, T*, i64, i64, i64,   \
                                     bool, bool);                             \
  template void matmul_acc_omp<T>(const T*, const T*, T*, i64, i64, i64,      \
                                  bool, bool);                                \
  template void matmul_acc<T>(const T*, const T*, T*, i64, i64, i64, bool,    \
                              bool);                                          \
  template void bmm_acc_serial<T>(const T*, const T*, T*, i64, i64, i64, i64, \
                                  bool, bool);                                \
  template void bmm_acc_omp<T>(const T*, const T*, T*, i64, i64, i64, i64,    \
                               bool, bool);                                   \
  template void bmm_acc<T>(const T*, const T*, T*, i64, i64, i64, i64, bool,  \
                           bool);

FTN_INSTANTIATE_KERNELS(float)
FTN_INSTANTIATE_KERNELS(double)

}  // namespace ftn::kernels
