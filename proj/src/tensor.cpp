#include "ftn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ftn/kernels.hpp"

namespace ftn {

namespace {
#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif

template <typename... Args>
std::string sstr(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

std::string shape_str(const std::vector<idx>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

void check_finite_or_throw(const void* data, idx n, bool is_double,
                           const char* where) {
  if (is_double) {
    const double* p = static_cast<const double*>(data);
    for (idx i = 0; i < n; ++i)
      if (!std::isfinite(p[i]))
        throw Error(sstr("non-finite value at index ", i, " in ", where));
  } else {
    const float* p = static_cast<const float*>(data);
    for (idx i = 0; i < n; ++i)
      if (!std::isfinite(p[i]))
        throw Error(sstr("non-finite value at index ", i, " in ", where));
  }
}

template <typename T>
Tensor<T> make_op_node(std::vector<idx> shape, std::vector<T> value,
                       std::vector<std::shared_ptr<TensorNode<T>>> parents,
                       std::function<void(TensorNode<T>&)> backward,
                       const char* op_name) {
  if (g_debug_checks)
    check_finite_or_throw(value.data(), static_cast<idx>(value.size()),
                          std::is_same_v<T, double>, op_name);
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) rg = true;
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_op_node<float>(
    std::vector<idx>, std::vector<float>,
    std::vector<std::shared_ptr<TensorNode<float>>>,
    std::function<void(TensorNode<float>&)>, const char*);
template Tensor<double> make_op_node<double>(
    std::vector<idx>, std::vector<double>,
    std::vector<std::shared_ptr<TensorNode<double>>>,
    std::function<void(TensorNode<double>&)>, const char*);

}  // namespace detail

namespace {

idx shape_numel(const std::vector<idx>& shape) {
  idx n = 1;
  for (idx e : shape) {
    if (e <= 0) throw Error(sstr("non-positive extent in shape ", shape_str(shape)));
    n *= e;
  }
  return n;
}

template <typename T>
void accumulate(TensorNode<T>& dst, const std::vector<T>& src) {
  dst.ensure_grad();
  for (size_t i = 0; i < src.size(); ++i) dst.grad[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<idx> shape) {
  idx n = shape_numel(shape);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(n), T(0));
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<idx> shape, T v) {
  if (!std::isfinite(static_cast<double>(v)))
    throw Error("Tensor::full rejects non-finite fill value");
  idx n = shape_numel(shape);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(n), v);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(std::vector<idx> shape, std::vector<T> data) {
  idx n = shape_numel(shape);
  if (n != static_cast<idx>(data.size()))
    throw Error(sstr("from_data: shape ", shape_str(shape), " wants ", n,
                     " values, got ", data.size()));
  detail::check_finite_or_throw(data.data(), n, std::is_same_v<T, double>,
                                "from_data");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (!node_ || node_->numel() != 1)
    throw Error("item() requires a scalar tensor");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <typename T>
void Tensor<T>::backward() const {
  if (!node_ || node_->numel() != 1)
    throw Error("backward() requires a scalar output");
  Node* root = node_.get();
  if (!root->requires_grad) return;

  // Post-order DFS over the requires-grad subgraph; reversing it yields a
  // topological order where every consumer runs before its producers.
  std::vector<Node*> topo;
  struct Frame {
    Node* n;
    size_t next;
  };
  std::vector<Frame> stack;
  std::unordered_set<Node*> seen;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  root->grad.assign(1, T(1));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// element-wise ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw Error(sstr("add: shape mismatch ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape())));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (idx i = 0; i < a.numel(); ++i) out[i] += bd[i];
  return detail::make_op_node<T>(
      a.shape(), std::move(out), {a.node(), b.node()},
      [](TensorNode<T>& self) {
        for (int k = 0; k < 2; ++k) {
          auto& p = self.parents[k];
          if (!p->requires_grad) continue;
          accumulate(*p, self.grad);
        }
      },
      "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw Error(sstr("sub: shape mismatch ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape())));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (idx i = 0; i < a.numel(); ++i) out[i] -= bd[i];
  return detail::make_op_node<T>(
      a.shape(), std::move(out), {a.node(), b.node()},
      [](TensorNode<T>& self) {
        if (self.parents[0]->requires_grad) accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
          auto& p = *self.parents[1];
          p.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] -= self.grad[i];
        }
      },
      "sub");
}

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw Error(sstr("elementwise_mul: shape mismatch ", shape_str(a.shape()),
                     " vs ", shape_str(b.shape())));
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (idx i = 0; i < a.numel(); ++i) out[i] = ad[i] * bd[i];
  return detail::make_op_node<T>(
      a.shape(), std::move(out), {a.node(), b.node()},
      [](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] += self.grad[i] * pa.value[i];
        }
      },
      "elementwise_mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (idx i = 0; i < x.numel(); ++i) out[i] = c * xd[i];
  return detail::make_op_node<T>(
      x.shape(), std::move(out), {x.node()},
      [c](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
      },
      "scale");
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& s, const Tensor<T>& x) {
  if (s.numel() != 1) throw Error("scale_by: scale tensor must be a scalar");
  const T sv = s.data()[0];
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (idx i = 0; i < x.numel(); ++i) out[i] = sv * xd[i];
  return detail::make_op_node<T>(
      x.shape(), std::move(out), {s.node(), x.node()},
      [sv](TensorNode<T>& self) {
        auto& ps = *self.parents[0];
        auto& px = *self.parents[1];
        if (ps.requires_grad) {
          ps.ensure_grad();
          T acc = 0;
          for (size_t i = 0; i < self.grad.size(); ++i)
            acc += self.grad[i] * px.value[i];
          ps.grad[0] += acc;
        }
        if (px.requires_grad) {
          px.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            px.grad[i] += sv * self.grad[i];
        }
      },
      "scale_by");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (idx i = 0; i < x.numel(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  return detail::make_op_node<T>(
      x.shape(), std::move(out), {x.node()},
      [](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (p.value[i] > T(0)) p.grad[i] += self.grad[i];
      },
      "relu");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (idx i = 0; i < x.numel(); ++i) {
    const T v = xd[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                       : std::exp(v) / (T(1) + std::exp(v));
  }
  return detail::make_op_node<T>(
      x.shape(), std::move(out), {x.node()},
      [](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
          const T y = self.value[i];
          p.grad[i] += self.grad[i] * y * (T(1) - y);
        }
      },
      "sigmoid");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw Error(sstr("softmax: axis out of range for shape ",
                     shape_str(x.shape())));
  idx outer = 1, inner = 1;
  const idx n = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);

  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (idx o = 0; o < outer; ++o) {
    for (idx in = 0; in < inner; ++in) {
      const idx base = o * n * inner + in;
      T m = xd[base];
      for (idx j = 1; j < n; ++j) m = std::max(m, xd[base + j * inner]);
      T s = 0;
      for (idx j = 0; j < n; ++j) {
        const T e = std::exp(xd[base + j * inner] - m);
        out[base + j * inner] = e;
        s += e;
      }
      const T invs = T(1) / s;
      for (idx j = 0; j < n; ++j) out[base + j * inner] *= invs;
    }
  }
  return detail::make_op_node<T>(
      x.shape(), std::move(out), {x.node()},
      [outer, n, inner](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (idx o = 0; o < outer; ++o) {
          for (idx in = 0; in < inner; ++in) {
            const idx base = o * n * inner + in;
            T dot = 0;
            for (idx j = 0; j < n; ++j)
              dot += self.grad[base + j * inner] * self.value[base + j * inner];
            for (idx j = 0; j < n; ++j) {
              const idx at = base + j * inner;
              p.grad[at] += self.value[at] * (self.grad[at] - dot);
            }
          }
        }
      },
      "softmax");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<idx> shape) {
  idx n = shape_numel(shape);
  if (n != x.numel())
    throw Error(sstr("reshape: cannot view ", shape_str(x.shape()), " as ",
                     shape_str(shape)));
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_op_node<T>(
      std::move(shape), std::move(out), {x.node()},
      [](TensorNode<T>& self) { accumulate(*self.parents[0], self.grad); },
      "reshape");
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4)
    throw Error("concat_channels: 4-D tensors expected");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw Error(sstr("concat_channels: incompatible shapes ",
                     shape_str(a.shape()), " vs ", shape_str(b.shape())));
  const idx B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1);
  const idx plane = a.dim(2) * a.dim(3);
  std::vector<T> out(static_cast<size_t>(B * (C1 + C2) * plane));
  auto ad = a.data();
  auto bd = b.data();
  for (idx bb = 0; bb < B; ++bb) {
    std::copy_n(ad.data() + bb * C1 * plane, C1 * plane,
                out.data() + bb * (C1 + C2) * plane);
    std::copy_n(bd.data() + bb * C2 * plane, C2 * plane,
                out.data() + bb * (C1 + C2) * plane + C1 * plane);
  }
  return detail::make_op_node<T>(
      {B, C1 + C2, a.dim(2), a.dim(3)}, std::move(out), {a.node(), b.node()},
      [B, C1, C2, plane](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (idx bb = 0; bb < B; ++bb) {
          const T* g = self.grad.data() + bb * (C1 + C2) * plane;
          if (pa.requires_grad) {
            T* pg = pa.grad.data() + bb * C1 * plane;
            for (idx i = 0; i < C1 * plane; ++i) pg[i] += g[i];
          }
          if (pb.requires_grad) {
            T* pg = pb.grad.data() + bb * C2 * plane;
            for (idx i = 0; i < C2 * plane; ++i) pg[i] += g[C1 * plane + i];
          }
        }
      },
      "concat_channels");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::make_op_node<T>(
      {1}, {acc}, {x.node()},
      [](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        const T g = self.grad[0];
        for (auto& v : p.grad) v += g;
      },
      "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  return detail::make_op_node<T>(
      {1}, {acc * inv}, {x.node()},
      [inv](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        const T g = self.grad[0] * inv;
        for (auto& v : p.grad) v += g;
      },
      "mean");
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw Error("matmul: 2-D tensors expected");
  const idx m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw Error(sstr("matmul: inner dimensions differ, ", shape_str(a.shape()),
                     " vs ", shape_str(b.shape())));
  std::vector<T> out(static_cast<size_t>(m * n), T(0));
  kernels::matmul_acc(a.data().data(), b.data().data(), out.data(), m, k, n,
                      false, false);
  return detail::make_op_node<T>(
      {m, n}, std::move(out), {a.node(), b.node()},
      [m, k, n](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          kernels::matmul_acc(self.grad.data(), pb.value.data(), pa.grad.data(),
                              m, n, k, false, true);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          kernels::matmul_acc(pa.value.data(), self.grad.data(), pb.grad.data(),
                              k, m, n, true, false);
        }
      },
      "matmul");
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  if (a.rank() != 3 || b.rank() != 3)
    throw Error("bmm: 3-D tensors expected");
  const idx batch = a.dim(0);
  if (b.dim(0) != batch)
    throw Error(sstr("bmm: batch mismatch ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape())));
  const idx m = ta ? a.dim(2) : a.dim(1);
  const idx k = ta ? a.dim(1) : a.dim(2);
  const idx kb = tb ? b.dim(2) : b.dim(1);
  const idx n = tb ? b.dim(1) : b.dim(2);
  if (k != kb)
    throw Error(sstr("bmm: inner dimensions differ, ", shape_str(a.shape()),
                     (ta ? "^T" : ""), " vs ", shape_str(b.shape()),
                     (tb ? "^T" : "")));
  std::vector<T> out(static_cast<size_t>(batch * m * n), T(0));
  kernels::bmm_acc(a.data().data(), b.data().data(), out.data(), batch, m, k,
                   n, ta, tb);
  return detail::make_op_node<T>(
      {batch, m, n}, std::move(out), {a.node(), b.node()},
      [batch, m, k, n, ta, tb](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          if (!ta)
            kernels::bmm_acc(self.grad.data(), pb.value.data(), pa.grad.data(),
                             batch, m, n, k, false, !tb);
          else
            kernels::bmm_acc(pb.value.data(), self.grad.data(), pa.grad.data(),
                             batch, k, n, m, tb, true);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          if (!tb)
            kernels::bmm_acc(pa.value.data(), self.grad.data(), pb.grad.data(),
                             batch, k, m, n, !ta, false);
          else
            kernels::bmm_acc(self.grad.data(), pa.value.data(), pb.grad.data(),
                             batch, n, m, k, true, ta);
        }
      },
      "bmm");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
    throw Error("linear: expected x [B,I], w [O,I], b [O]");
  const idx B = x.dim(0), I = x.dim(1), O = w.dim(0);
  if (w.dim(1) != I || b.dim(0) != O)
    throw Error(sstr("linear: shape mismatch x ", shape_str(x.shape()), ", w ",
                     shape_str(w.shape()), ", b ", shape_str(b.shape())));
  std::vector<T> out(static_cast<size_t>(B * O));
  auto bd = b.data();
  for (idx bb = 0; bb < B; ++bb)
    for (idx o = 0; o < O; ++o) out[bb * O + o] = bd[o];
  kernels::matmul_acc(x.data().data(), w.data().data(), out.data(), B, I, O,
                      false, true);
  return detail::make_op_node<T>(
      {B, O}, std::move(out), {x.node(), w.node(), b.node()},
      [B, I, O](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        if (px.requires_grad) {
          px.ensure_grad();
          kernels::matmul_acc(self.grad.data(), pw.value.data(), px.grad.data(),
                              B, O, I, false, false);
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          kernels::matmul_acc(self.grad.data(), px.value.data(), pw.grad.data(),
                              O, B, I, true, false);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (idx bb = 0; bb < B; ++bb)
            for (idx o = 0; o < O; ++o) pb.grad[o] += self.grad[bb * O + o];
        }
      },
      "linear");
}

// ---------------------------------------------------------------------------
// convolution and normalisation

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw Error("conv2d: expected x [B,C,H,W] and w [O,C,kh,kw]");
  if (stride < 1) throw Error("conv2d: stride must be >= 1");
  if (pad < 0) throw Error("conv2d: pad must be >= 0");
  kernels::Conv2dDims d;
  d.batch = x.dim(0);
  d.in_c = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.out_c = w.dim(0);
  d.k_h = w.dim(2);
  d.k_w = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(1) != d.in_c)
    throw Error(sstr("conv2d: input has ", d.in_c, " channels but kernel ",
                     shape_str(w.shape()), " expects ", w.dim(1)));
  if (b.numel() != d.out_c)
    throw Error(sstr("conv2d: bias ", shape_str(b.shape()),
                     " does not match ", d.out_c, " output channels"));
  if (d.in_h + 2 * d.pad < d.k_h || d.in_w + 2 * d.pad < d.k_w)
    throw Error(sstr("conv2d: kernel ", d.k_h, "x", d.k_w,
                     " does not fit padded input ", shape_str(x.shape()),
                     " with pad ", pad));
  d.out_h = (d.in_h + 2 * d.pad - d.k_h) / d.stride + 1;
  d.out_w = (d.in_w + 2 * d.pad - d.k_w) / d.stride + 1;

  std::vector<T> out(static_cast<size_t>(d.batch * d.out_c * d.out_h * d.out_w));
  kernels::conv2d_forward(x.data().data(), w.data().data(), b.data().data(),
                          out.data(), d);
  return detail::make_op_node<T>(
      {d.batch, d.out_c, d.out_h, d.out_w}, std::move(out),
      {x.node(), w.node(), b.node()},
      [d](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        if (px.requires_grad) {
          px.ensure_grad();
          kernels::conv2d_backward_x(self.grad.data(), pw.value.data(),
                                     px.grad.data(), d);
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          kernels::conv2d_backward_w(self.grad.data(), px.value.data(),
                                     pw.grad.data(), d);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          kernels::conv2d_backward_b(self.grad.data(), pb.grad.data(), d);
        }
      },
      "conv2d");
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, T eps,
                       T momentum) {
  if (x.rank() != 4) throw Error("batch_norm2d: expected [B,C,H,W]");
  const idx B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw Error(sstr("batch_norm2d: parameter size mismatch for C=", C));
  const idx m = B * H * W;
  if (training && m < 2)
    throw Error("batch_norm2d: training mode needs at least 2 samples per channel");

  std::vector<T> mean_c(C), istd_c(C);
  auto xd = x.data();
  if (training) {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (idx c = 0; c < C; ++c) {
      T s = 0;
      for (idx b = 0; b < B; ++b) {
        const T* p = xd.data() + ((b * C + c) * H) * W;
        for (idx i = 0; i < H * W; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(m);
      T v = 0;
      for (idx b = 0; b < B; ++b) {
        const T* p = xd.data() + ((b * C + c) * H) * W;
        for (idx i = 0; i < H * W; ++i) {
          const T dlt = p[i] - mu;
          v += dlt * dlt;
        }
      }
      const T var = v / static_cast<T>(m);
      mean_c[c] = mu;
      istd_c[c] = T(1) / std::sqrt(var + eps);
      const T var_unbiased = v / static_cast<T>(m - 1);
      rm[c] = (T(1) - momentum) * rm[c] + momentum * mu;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * var_unbiased;
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (idx c = 0; c < C; ++c) {
      mean_c[c] = rm[c];
      istd_c[c] = T(1) / std::sqrt(rv[c] + eps);
    }
  }

  std::vector<T> out(x.numel());
  auto gd = gamma.data();
  auto bd = beta.data();
  for (idx b = 0; b < B; ++b) {
    for (idx c = 0; c < C; ++c) {
      const T* p = xd.data() + ((b * C + c) * H) * W;
      T* q = out.data() + ((b * C + c) * H) * W;
      const T mu = mean_c[c], is = istd_c[c], g = gd[c], bt = bd[c];
      for (idx i = 0; i < H * W; ++i) q[i] = g * (p[i] - mu) * is + bt;
    }
  }

  return detail::make_op_node<T>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [B, C, H, W, m, training, mean_c, istd_c](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const idx hw = H * W;
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (idx c = 0; c < C; ++c) {
          const T mu = mean_c[c], is = istd_c[c];
          const T g = pg.value[c];
          T sum_dy = 0, sum_dy_xhat = 0;
          for (idx b = 0; b < B; ++b) {
            const T* xp = px.value.data() + ((b * C + c) * H) * W;
            const T* gp = self.grad.data() + ((b * C + c) * H) * W;
            for (idx i = 0; i < hw; ++i) {
              sum_dy += gp[i];
              sum_dy_xhat += gp[i] * (xp[i] - mu) * is;
            }
          }
          if (pg.requires_grad) pg.grad[c] += sum_dy_xhat;
          if (pb.requires_grad) pb.grad[c] += sum_dy;
          if (!px.requires_grad) continue;
          if (training) {
            const T inv_m = T(1) / static_cast<T>(m);
            for (idx b = 0; b < B; ++b) {
              const T* xp = px.value.data() + ((b * C + c) * H) * W;
              const T* gp = self.grad.data() + ((b * C + c) * H) * W;
              T* dp = px.grad.data() + ((b * C + c) * H) * W;
              for (idx i = 0; i < hw; ++i) {
                const T xhat = (xp[i] - mu) * is;
                dp[i] += g * is *
                         (gp[i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
              }
            }
          } else {
            for (idx b = 0; b < B; ++b) {
              const T* gp = self.grad.data() + ((b * C + c) * H) * W;
              T* dp = px.grad.data() + ((b * C + c) * H) * W;
              for (idx i = 0; i < hw; ++i) dp[i] += g * is * gp[i];
            }
          }
        }
      },
      "batch_norm2d");
}

// ---------------------------------------------------------------------------
// pooling and pixel shuffle

template <typename T>
Tensor<T> channel_max_pool(const Tensor<T>& x, int n) {
  if (x.rank() != 4) throw Error("channel_max_pool: expected [B,C,H,W]");
  const idx B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (n < 1 || C % n != 0)
    throw Error(sstr("channel_max_pool: C=", C, " not divisible by n=", n));
  const idx D = C / n;
  const idx hw = H * W;
  std::vector<T> out(static_cast<size_t>(B * D * hw));
  // Relative winning channel per output element; first index wins ties.
  std::vector<std::int32_t> argmax(out.size());
  auto xd = x.data();
  for (idx b = 0; b < B; ++b) {
    for (idx dch = 0; dch < D; ++dch) {
      T* q = out.data() + ((b * D + dch) * hw);
      std::int32_t* am = argmax.data() + ((b * D + dch) * hw);
      const T* p0 = xd.data() + ((b * C + dch * n) * hw);
      for (idx i = 0; i < hw; ++i) {
        q[i] = p0[i];
        am[i] = 0;
      }
      for (int k = 1; k < n; ++k) {
        const T* pk = p0 + k * hw;
        for (idx i = 0; i < hw; ++i) {
          if (pk[i] > q[i]) {
            q[i] = pk[i];
            am[i] = k;
          }
        }
      }
    }
  }
  return detail::make_op_node<T>(
      {B, D, H, W}, std::move(out), {x.node()},
      [B, D, n, hw, argmax = std::move(argmax)](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (idx b = 0; b < B; ++b) {
          for (idx dch = 0; dch < D; ++dch) {
            const idx obase = (b * D + dch) * hw;
            const idx ibase = (b * D * n + dch * n) * hw;
            for (idx i = 0; i < hw; ++i)
              p.grad[ibase + argmax[obase + i] * hw + i] += self.grad[obase + i];
          }
        }
      },
      "channel_max_pool");
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw Error("global_avg_pool: expected [B,C,H,W]");
  const idx B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<size_t>(B * C));
  auto xd = x.data();
  const T inv = T(1) / static_cast<T>(hw);
  for (idx bc = 0; bc < B * C; ++bc) {
    T s = 0;
    const T* p = xd.data() + bc * hw;
    for (idx i = 0; i < hw; ++i) s += p[i];
    out[bc] = s * inv;
  }
  return detail::make_op_node<T>(
      {B, C}, std::move(out), {x.node()},
      [hw, inv](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (size_t bc = 0; bc < self.grad.size(); ++bc) {
          const T g = self.grad[bc] * inv;
          T* dp = p.grad.data() + bc * hw;
          for (idx i = 0; i < hw; ++i) dp[i] += g;
        }
      },
      "global_avg_pool");
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw Error("global_max_pool: expected [B,C,H,W]");
  const idx B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<size_t>(B * C));
  std::vector<std::int32_t> argmax(out.size());
  auto xd = x.data();
  for (idx bc = 0; bc < B * C; ++bc) {
    const T* p = xd.data() + bc * hw;
    T best = p[0];
    std::int32_t bi = 0;
    for (idx i = 1; i < hw; ++i) {
      if (p[i] > best) {
        best = p[i];
        bi = static_cast<std::int32_t>(i);
      }
    }
    out[bc] = best;
    argmax[bc] = bi;
  }
  return detail::make_op_node<T>(
      {B, C}, std::move(out), {x.node()},
      [hw, argmax = std::move(argmax)](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (size_t bc = 0; bc < self.grad.size(); ++bc)
          p.grad[bc * hw + argmax[bc]] += self.grad[bc];
      },
      "global_max_pool");
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (x.rank() != 4) throw Error("pixel_shuffle: expected [B,C,H,W]");
  const idx B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const idx r2 = static_cast<idx>(r) * r;
  if (r < 1 || C % r2 != 0)
    throw Error(sstr("pixel_shuffle: C=", C, " not divisible by r^2=", r2));
  const idx Co = C / r2, Ho = H * r, Wo = W * r;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (idx b = 0; b < B; ++b)
    for (idx co = 0; co < Co; ++co)
      for (idx dy = 0; dy < r; ++dy)
        for (idx dx = 0; dx < r; ++dx) {
          const idx ci = co * r2 + dy * r + dx;
          const T* p = xd.data() + ((b * C + ci) * H) * W;
          for (idx h = 0; h < H; ++h) {
            T* q = out.data() + ((b * Co + co) * Ho + (h * r + dy)) * Wo + dx;
            for (idx w = 0; w < W; ++w) q[w * r] = p[h * W + w];
          }
        }
  return detail::make_op_node<T>(
      {B, Co, Ho, Wo}, std::move(out), {x.node()},
      [B, C, Co, H, W, Ho, Wo, r, r2](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (idx b = 0; b < B; ++b)
          for (idx co = 0; co < Co; ++co)
            for (idx dy = 0; dy < r; ++dy)
              for (idx dx = 0; dx < r; ++dx) {
                const idx ci = co * r2 + dy * r + dx;
                T* dp = p.grad.data() + ((b * C + ci) * H) * W;
                for (idx h = 0; h < H; ++h) {
                  const T* g = self.grad.data() +
                               ((b * Co + co) * Ho + (h * r + dy)) * Wo + dx;
                  for (idx w = 0; w < W; ++w) dp[h * W + w] += g[w * r];
                }
              }
      },
      "pixel_shuffle");
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  if (x.rank() != 4) throw Error("pixel_unshuffle: expected [B,C,H,W]");
  const idx B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (r < 1 || H % r != 0 || W % r != 0)
    throw Error(sstr("pixel_unshuffle: spatial dims ", H, "x", W,
                     " not divisible by r=", r));
  const idx r2 = static_cast<idx>(r) * r;
  const idx Co = C * r2, Ho = H / r, Wo = W / r;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (idx b = 0; b < B; ++b)
    for (idx c = 0; c < C; ++c)
      for (idx dy = 0; dy < r; ++dy)
        for (idx dx = 0; dx < r; ++dx) {
          const idx co = c * r2 + dy * r + dx;
          T* q = out.data() + ((b * Co + co) * Ho) * Wo;
          for (idx h = 0; h < Ho; ++h) {
            const T* p =
                xd.data() + ((b * C + c) * H + (h * r + dy)) * W + dx;
            for (idx w = 0; w < Wo; ++w) q[h * Wo + w] = p[w * r];
          }
        }
  return detail::make_op_node<T>(
      {B, Co, Ho, Wo}, std::move(out), {x.node()},
      [B, C, Co, H, W, Ho, Wo, r, r2](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (idx b = 0; b < B; ++b)
          for (idx c = 0; c < C; ++c)
            for (idx dy = 0; dy < r; ++dy)
              for (idx dx = 0; dx < r; ++dx) {
                const idx co = c * r2 + dy * r + dx;
                const T* g = self.grad.data() + ((b * Co + co) * Ho) * Wo;
                for (idx h = 0; h < Ho; ++h) {
                  T* dp =
                      p.grad.data() + ((b * C + c) * H + (h * r + dy)) * W + dx;
                  for (idx w = 0; w < Wo; ++w) dp[w * r] += g[h * Wo + w];
                }
              }
      },
      "pixel_unshuffle");
}

// ---------------------------------------------------------------------------

#define FTN_INSTANTIATE_TENSOR(T)                                              \
  template class Tensor<T>;                                                    \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> elementwise_mul<T>(const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                            \
  template Tensor<T> scale_by<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> relu<T>(const Tensor<T>&);                                \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                             \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                        \
  template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<idx>);           \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> sum<T>(const Tensor<T>&);                                 \
  template Tensor<T> mean<T>(const Tensor<T>&);                                \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);   \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&);                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, int, int);                    \
  template Tensor<T> batch_norm2d<T>(const Tensor<T>&, const Tensor<T>&,       \
                                     const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                                     bool, T, T);                              \
  template Tensor<T> channel_max_pool<T>(const Tensor<T>&, int);               \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                     \
  template Tensor<T> global_max_pool<T>(const Tensor<T>&);                     \
  template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, int);                  \
  template Tensor<T> pixel_unshuffle<T>(const Tensor<T>&, int);

FTN_INSTANTIATE_TENSOR(float)
FTN_INSTANTIATE_TENSOR(double)

}  // namespace ftn
