#pragma once

#include <cstdint>

namespace ftn::kernels {

// Global switch between the serial reference kernels and the OpenMP ones.
// Both produce bitwise-identical results: every output element is owned by
// one thread and accumulated in the same order as the serial loop, and the
// build disables FMA contraction. Defaults to parallel when compiled with
// OpenMP.
void set_parallel(bool on);
bool parallel_enabled();
int max_threads();

struct Conv2dDims {
  std::int64_t batch, in_c, in_h, in_w;
  std::int64_t out_c, k_h, k_w;
  std::int64_t stride, pad;
  std::int64_t out_h, out_w;
};

// y[b,o,oy,ox] = bias[o] + sum_{c,i,j} w[o,c,i,j] * x[b,c,oy*s-p+i,ox*s-p+j]
// bias may be null.
template <typename T>
void conv2d_forward_serial(const T* x, const T* w, const T* bias, T* y,
                           const Conv2dDims& d);
template <typename T>
void conv2d_forward_omp(const T* x, const T* w, const T* bias, T* y,
                        const Conv2dDims& d);
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y,
                    const Conv2dDims& d);

// dx[b,c,h,w] += sum_{o,i,j} w[o,c,i,j] * dy[b,o,(h+p-i)/s,(w+p-j)/s]
// (gather form; terms where the division is not exact are skipped).
// Backward kernels accumulate so multi-consumer gradients can share a buffer.
template <typename T>
void conv2d_backward_x_serial(const T* dy, const T* w, T* dx,
                              const Conv2dDims& d);
template <typename T>
void conv2d_backward_x_omp(const T* dy, const T* w, T* dx,
                           const Conv2dDims& d);
template <typename T>
void conv2d_backward_x(const T* dy, const T* w, T* dx, const Conv2dDims& d);

// dw[o,c,i,j] += sum_{b,oy,ox} dy[b,o,oy,ox] * x[b,c,oy*s-p+i,ox*s-p+j]
template <typename T>
void conv2d_backward_w_serial(const T* dy, const T* x, T* dw,
                              const Conv2dDims& d);
template <typename T>
void conv2d_backward_w_omp(const T* dy, const T* x, T* dw,
                           const Conv2dDims& d);
template <typename T>
void conv2d_backward_w(const T* dy, const T* x, T* dw, const Conv2dDims& d);

// db[o] += sum_{b,oy,ox} dy[b,o,oy,ox]
template <typename T>
void conv2d_backward_b(const T* dy, T* db, const Conv2dDims& d);

// c[m,n] += sum_k opA(a)[m,k] * opB(b)[k,n], where opX transposes the stored
// buffer when the flag is set. The caller zero-initialises c (accumulating
// lets the backward passes reuse the kernel).
template <typename T>
void matmul_acc_serial(const T* a, const T* b, T* c, std::int64_t m,
                       std::int64_t k, std::int64_t n, bool ta, bool tb);
template <typename T>
void matmul_acc_omp(const T* a, const T* b, T* c, std::int64_t m,
                    std::int64_t k, std::int64_t n, bool ta, bool tb);
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
                std::int64_t n, bool ta, bool tb);

// Batched variant; a, b, c are dense stacks of `batch` matrices.
template <typename T>
void bmm_acc_serial(const T* a, const T* b, T* c, std::int64_t batch,
                    std::int64_t m, std::int64_t k, std::int64_t n, bool ta,
                    bool tb);
template <typename T>
void bmm_acc_omp(const T* a, const T* b, T* c, std::int64_t batch,
                 std::int64_t m, std::int64_t k, std::int64_t n, bool ta,
                 bool tb);
template <typename T>
void bmm_acc(const T* a, const T* b, T* c, std::int64_t batch, std::int64_t m,
             std::int64_t k, std::int64_t n, bool ta, bool tb);

}  // namespace ftn::kernels
