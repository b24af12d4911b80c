#include "ftn/cfa.hpp"

#include <sstream>

namespace ftn {

namespace {
int checked_cfa_d(const CfaConfig& cfg) {
  if (cfg.in_channels <= 0 || cfg.pool_factor <= 0 ||
      cfg.in_channels % cfg.pool_factor != 0) {
    std::ostringstream os;
    os << "Cfa: in_channels " << cfg.in_channels
       << " must be divisible by pool factor " << cfg.pool_factor;
    throw Error(os.str());
  }
  return cfg.in_channels / cfg.pool_factor;
}

int checked_half(int c) {
  if (c <= 0 || c % 2 != 0)
    throw Error("PamCam: channel count must be divisible by 2");
  return c / 2;
}
}  // namespace

template <typename T>
Cfa<T>::Cfa(const CfaConfig& cfg, Rng& rng)
    : q_conv(checked_cfa_d(cfg), checked_cfa_d(cfg), 1, 1, 0, rng),
      k_conv(checked_cfa_d(cfg), checked_cfa_d(cfg), 1, 1, 0, rng),
      v_conv(checked_cfa_d(cfg), checked_cfa_d(cfg), 1, 1, 0, rng),
      q_bn(checked_cfa_d(cfg)),
      k_bn(checked_cfa_d(cfg)),
      fuse_bn(checked_cfa_d(cfg)),
      recover(checked_cfa_d(cfg), cfg.in_channels, 1, 1, 0, rng),
      cfg_(cfg) {
  this->add_child("q_conv", &q_conv);
  this->add_child("k_conv", &k_conv);
  this->add_child("v_conv", &v_conv);
  this->add_child("q_bn", &q_bn);
  this->add_child("k_bn", &k_bn);
  this->add_child("fuse_bn", &fuse_bn);
  this->add_child("recover", &recover);
  gamma = this->add_param("gamma", Tensor<T>::zeros({1}));
  phi = this->add_param("phi", Tensor<T>::zeros({1}));
}

template <typename T>
CfaOutput<T> Cfa<T>::forward(const Tensor<T>& a, bool training) const {
  if (a.rank() != 4 || a.dim(1) != cfg_.in_channels) {
    std::ostringstream os;
    os << "Cfa: expected [B," << cfg_.in_channels << ",H,W], got "
       << shape_str(a.shape());
    throw Error(os.str());
  }
  const idx B = a.dim(0), H = a.dim(2), W = a.dim(3);
  const idx D = cfg_.in_channels / cfg_.pool_factor;
  const idx N = H * W;

  Tensor<T> b_feat = channel_max_pool(a, cfg_.pool_factor);
  Tensor<T> q = relu(q_bn.forward(q_conv.forward(b_feat), training));
  Tensor<T> k = relu(k_bn.forward(k_conv.forward(b_feat), training));
  Tensor<T> v = v_conv.forward(b_feat);

  Tensor<T> q_flat = reshape(q, {B, D, N});
  Tensor<T> k_flat = reshape(k, {B, D, N});
  Tensor<T> v_flat = reshape(v, {B, D, N});

  // X = softmax(Q K^T) over rows: [B,D,D]
  Tensor<T> x_aff = softmax(bmm(q_flat, k_flat, false, true), 2);
  // S = softmax(K^T Q) over rows: [B,N,N]
  Tensor<T> s_aff = softmax(bmm(k_flat, q_flat, true, false), 2);

  Tensor<T> ca_flat = bmm(x_aff, v_flat);           // [B,D,N]
  Tensor<T> pa_flat = bmm(v_flat, s_aff, false, true);  // V S^T: [B,D,N]
  Tensor<T> ca = reshape(ca_flat, {B, D, H, W});
  Tensor<T> pa = reshape(pa_flat, {B, D, H, W});

  // B' = gamma*CA + phi*PA + B, fused per channel.
  Tensor<T> fused =
      add(add(scale_by(gamma->tensor, ca), scale_by(phi->tensor, pa)), b_feat);
  Tensor<T> attended = recover.forward(fuse_bn.forward(fused, training));

  return {attended, ca, pa, x_aff, s_aff};
}

template <typename T>
PamCam<T>::Branch::Branch(int c, int d, bool positional_, Rng& rng)
    : reduce(c, d, 3, 1, 1, rng),
      q_conv(d, d, 1, 1, 0, rng),
      k_conv(d, d, 1, 1, 0, rng),
      v_conv(d, d, 1, 1, 0, rng),
      restore(d, c, 3, 1, 1, rng),
      q_bn(d),
      k_bn(d),
      positional(positional_) {
  this->add_child("reduce", &reduce);
  this->add_child("q_conv", &q_conv);
  this->add_child("k_conv", &k_conv);
  this->add_child("v_conv", &v_conv);
  this->add_child("restore", &restore);
  this->add_child("q_bn", &q_bn);
  this->add_child("k_bn", &k_bn);
  alpha = this->add_param("alpha", Tensor<T>::zeros({1}));
}

template <typename T>
Tensor<T> PamCam<T>::Branch::forward(const Tensor<T>& a, bool training) const {
  const idx B = a.dim(0), H = a.dim(2), W = a.dim(3);
  Tensor<T> f = reduce.forward(a);
  const idx D = f.dim(1);
  const idx N = H * W;
  Tensor<T> q = relu(q_bn.forward(q_conv.forward(f), training));
  Tensor<T> k = relu(k_bn.forward(k_conv.forward(f), training));
  Tensor<T> v = v_conv.forward(f);
  Tensor<T> q_flat = reshape(q, {B, D, N});
  Tensor<T> k_flat = reshape(k, {B, D, N});
  Tensor<T> v_flat = reshape(v, {B, D, N});
  Tensor<T> map;
  if (positional) {
    Tensor<T> s = softmax(bmm(k_flat, q_flat, true, false), 2);  // [B,N,N]
    map = reshape(bmm(v_flat, s, false, true), {B, D, H, W});
  } else {
    Tensor<T> x = softmax(bmm(q_flat, k_flat, false, true), 2);  // [B,D,D]
    map = reshape(bmm(x, v_flat), {B, D, H, W});
  }
  Tensor<T> gated = add(f, scale_by(alpha->tensor, map));
  return restore.forward(gated);
}

template <typename T>
PamCam<T>::PamCam(int in_channels_, Rng& rng)
    : position(in_channels_, checked_half(in_channels_), true, rng),
      channel(in_channels_, checked_half(in_channels_), false, rng),
      in_channels(in_channels_) {
  this->add_child("position", &position);
  this->add_child("channel", &channel);
}

template <typename T>
Tensor<T> PamCam<T>::forward(const Tensor<T>& a, bool training) const {
  return add(a, add(position.forward(a, training), channel.forward(a, training)));
}

template class Cfa<float>;
template class Cfa<double>;
template class PamCam<float>;
template class PamCam<double>;

}  // namespace ftn
