#include "ftn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ftn {

namespace {
template <typename... Args>
std::string sstr(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw Error("cross_entropy: expected [B,K] logits");
  const idx B = logits.dim(0), K = logits.dim(1);
  if (static_cast<idx>(labels.size()) != B)
    throw Error(sstr("cross_entropy: ", labels.size(), " labels for batch ", B));
  for (int l : labels)
    if (l < 0 || l >= K)
      throw Error(sstr("cross_entropy: label ", l, " out of range [0,", K, ")"));

  auto xd = logits.data();
  // Save softmax for the backward pass.
  std::vector<T> soft(static_cast<size_t>(B * K));
  T loss = 0;
  for (idx b = 0; b < B; ++b) {
    const T* row = xd.data() + b * K;
    T m = row[0];
    for (idx k = 1; k < K; ++k) m = std::max(m, row[k]);
    T s = 0;
    for (idx k = 0; k < K; ++k) {
      const T e = std::exp(row[k] - m);
      soft[b * K + k] = e;
      s += e;
    }
    const T inv = T(1) / s;
    for (idx k = 0; k < K; ++k) soft[b * K + k] *= inv;
    loss += m + std::log(s) - row[labels[static_cast<size_t>(b)]];
  }
  loss /= static_cast<T>(B);

  return detail::make_op_node<T>(
      {1}, {loss}, {logits.node()},
      [B, K, labels, soft = std::move(soft)](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        const T g = self.grad[0] / static_cast<T>(B);
        for (idx b = 0; b < B; ++b) {
          for (idx k = 0; k < K; ++k) {
            T d = soft[b * K + k];
            if (k == labels[static_cast<size_t>(b)]) d -= T(1);
            p.grad[b * K + k] += g * d;
          }
        }
      },
      "cross_entropy");
}

template <typename T>
Tensor<T> hard_triplet(const Tensor<T>& embeddings, const std::vector<int>& ids,
                       T margin) {
  if (embeddings.rank() != 2) throw Error("hard_triplet: expected [N,dim]");
  const idx N = embeddings.dim(0), dim = embeddings.dim(1);
  if (static_cast<idx>(ids.size()) != N)
    throw Error(sstr("hard_triplet: ", ids.size(), " ids for ", N, " rows"));

  // Validate batch composition: >= 2 identities, every identity >= 2 rows.
  std::vector<int> uniq(ids.begin(), ids.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < 2)
    throw Error("hard_triplet: batch needs at least two identities");
  for (int id : uniq) {
    const auto cnt = std::count(ids.begin(), ids.end(), id);
    if (cnt < 2)
      throw Error(sstr("hard_triplet: identity ", id, " has ", cnt,
                       " instance(s); need >= 2"));
  }

  auto xd = embeddings.data();
  std::vector<T> dist(static_cast<size_t>(N * N), T(0));
  for (idx i = 0; i < N; ++i) {
    for (idx j = i + 1; j < N; ++j) {
      T s = 0;
      const T* a = xd.data() + i * dim;
      const T* b = xd.data() + j * dim;
      for (idx k = 0; k < dim; ++k) {
        const T d = a[k] - b[k];
        s += d * d;
      }
      const T d = std::sqrt(s);
      dist[i * N + j] = d;
      dist[j * N + i] = d;
    }
  }

  struct AnchorPick {
    idx hp = -1, hn = -1;
    bool active = false;  // hinge not saturated
  };
  std::vector<AnchorPick> picks(static_cast<size_t>(N));
  T loss = 0;
  for (idx a = 0; a < N; ++a) {
    T hp = -T(1);
    idx hp_i = -1;
    T hn = T(0);
    idx hn_i = -1;
    bool hn_set = false;
    for (idx j = 0; j < N; ++j) {
      const T d = dist[a * N + j];
      if (ids[static_cast<size_t>(j)] == ids[static_cast<size_t>(a)]) {
        if (d > hp) {
          hp = d;
          hp_i = j;
        }
      } else if (!hn_set || d < hn) {
        hn = d;
        hn_i = j;
        hn_set = true;
      }
    }
    const T term = margin + hp - hn;
    if (term > T(0)) {
      loss += term;
      picks[static_cast<size_t>(a)] = {hp_i, hn_i, true};
    }
  }
  loss /= static_cast<T>(N);

  return detail::make_op_node<T>(
      {1}, {loss}, {embeddings.node()},
      [N, dim, dist = std::move(dist), picks = std::move(picks)](
          TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        const T g = self.grad[0] / static_cast<T>(N);
        auto add_pair = [&](idx a, idx other, T coeff) {
          const T d = dist[a * N + other];
          if (d <= T(0)) return;  // subgradient at the tie point
          const T* fa = p.value.data() + a * dim;
          const T* fo = p.value.data() + other * dim;
          T* ga = p.grad.data() + a * dim;
          T* go = p.grad.data() + other * dim;
          const T c = coeff / d;
          for (idx k = 0; k < dim; ++k) {
            const T diff = fa[k] - fo[k];
            ga[k] += c * diff;
            go[k] -= c * diff;
          }
        };
        for (idx a = 0; a < N; ++a) {
          const auto& pk = picks[static_cast<size_t>(a)];
          if (!pk.active) continue;
          add_pair(a, pk.hp, g);    // d(term)/d(hp distance) = +1
          add_pair(a, pk.hn, -g);   // d(term)/d(hn distance) = -1
        }
      },
      "hard_triplet");
}

namespace {
// Shared builder for the horizontal/vertical squared-difference maps.
// axis=1 -> horizontal (x neighbour), axis=0 -> vertical (y neighbour).
template <typename T>
Tensor<T> diff_sq_map(const Tensor<T>& img, int axis, bool sum_channels) {
  const idx B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  const idx Ho = axis == 0 ? H - 1 : H;
  const idx Wo = axis == 1 ? W - 1 : W;
  const idx dstep = axis == 1 ? 1 : W;

  std::vector<idx> shape = sum_channels ? std::vector<idx>{B, Ho, Wo}
                                        : std::vector<idx>{B, C, Ho, Wo};
  const idx plane_o = Ho * Wo;
  std::vector<T> out(static_cast<size_t>(B * (sum_channels ? 1 : C) * plane_o),
                     T(0));
  auto xd = img.data();
  for (idx b = 0; b < B; ++b) {
    for (idx c = 0; c < C; ++c) {
      const T* p = xd.data() + ((b * C + c) * H) * W;
      T* q = sum_channels ? out.data() + b * plane_o
                          : out.data() + ((b * C + c)) * plane_o;
      for (idx y = 0; y < Ho; ++y) {
        for (idx x = 0; x < Wo; ++x) {
          const idx at = y * W + x;
          const T d = p[at + dstep] - p[at];
          q[y * Wo + x] += d * d;
        }
      }
    }
  }
  return detail::make_op_node<T>(
      std::move(shape), std::move(out), {img.node()},
      [B, C, H, W, Ho, Wo, dstep, sum_channels](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        const idx plane_o = Ho * Wo;
        for (idx b = 0; b < B; ++b) {
          for (idx c = 0; c < C; ++c) {
            const T* xp = p.value.data() + ((b * C + c) * H) * W;
            T* dp = p.grad.data() + ((b * C + c) * H) * W;
            const T* g = sum_channels
                             ? self.grad.data() + b * plane_o
                             : self.grad.data() + (b * C + c) * plane_o;
            for (idx y = 0; y < Ho; ++y) {
              for (idx x = 0; x < Wo; ++x) {
                const idx at = y * W + x;
                const T d = xp[at + dstep] - xp[at];
                const T gg = T(2) * d * g[y * Wo + x];
                dp[at + dstep] += gg;
                dp[at] -= gg;
              }
            }
          }
        }
      },
      "image_gradients");
}
}  // namespace

template <typename T>
GradientMaps<T> image_gradients(const Tensor<T>& img, bool sum_channels) {
  if (img.rank() != 4) throw Error("image_gradients: expected [B,C,H,W]");
  if (img.dim(2) < 2 || img.dim(3) < 2)
    throw Error(sstr("image_gradients: spatial size ", img.dim(2), "x",
                     img.dim(3), " is too small (need >= 2x2)"));
  return {diff_sq_map(img, 1, sum_channels), diff_sq_map(img, 0, sum_channels)};
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw Error(sstr("l1_loss: shape mismatch ", shape_str(a.shape()), " vs ",
                     shape_str(b.shape())));
  auto ad = a.data();
  auto bd = b.data();
  T acc = 0;
  for (idx i = 0; i < a.numel(); ++i) acc += std::abs(ad[i] - bd[i]);
  const T inv = T(1) / static_cast<T>(a.numel());
  return detail::make_op_node<T>(
      {1}, {acc * inv}, {a.node(), b.node()},
      [inv](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T g = self.grad[0] * inv;
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (size_t i = 0; i < pa.value.size(); ++i) {
          const T d = pa.value[i] - pb.value[i];
          const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
          if (pa.requires_grad) pa.grad[i] += s;
          if (pb.requires_grad) pb.grad[i] -= s;
        }
      },
      "l1_loss");
}

template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& recon, const Tensor<T>& target,
                        bool sum_channels) {
  if (recon.shape() != target.shape())
    throw Error(sstr("gradient_loss: shape mismatch ", shape_str(recon.shape()),
                     " vs ", shape_str(target.shape())));
  GradientMaps<T> r = image_gradients(recon, sum_channels);
  GradientMaps<T> g = image_gradients(target, sum_channels);
  return add(l1_loss(r.gh, g.gh), l1_loss(r.gv, g.gv));
}

template <typename T>
Tensor<T> total_loss(const LossParts<T>& parts, const LossWeights& w) {
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  auto apply = [&](const std::optional<Tensor<T>>& part, double weight,
                   const char* name) {
    if (weight == 0.0) return;
    if (!part)
      throw Error(sstr("total_loss: weight for ", name,
                       " is non-zero but the part is absent"));
    acc = add(acc, scale(*part, static_cast<T>(weight)));
  };
  apply(parts.ce, w.ce, "ce");
  apply(parts.triplet, w.triplet, "triplet");
  apply(parts.gradient, w.gradient, "gradient");
  apply(parts.l1, w.l1, "l1");
  return acc;
}

#define FTN_INSTANTIATE_LOSSES(T)                                             \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&,                       \
                                      const std::vector<int>&);               \
  template Tensor<T> hard_triplet<T>(const Tensor<T>&,                        \
                                     const std::vector<int>&, T);             \
  template GradientMaps<T> image_gradients<T>(const Tensor<T>&, bool);        \
  template Tensor<T> gradient_loss<T>(const Tensor<T>&, const Tensor<T>&,     \
                                      bool);                                  \
  template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> total_loss<T>(const LossParts<T>&, const LossWeights&);

FTN_INSTANTIATE_LOSSES(float)
FTN_INSTANTIATE_LOSSES(double)

}  // namespace ftn
