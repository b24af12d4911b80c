#pragma once

#include <memory>
#include <vector>

#include "ftn/nn.hpp"

namespace ftn {

struct CfaConfig {
  int in_channels = 0;
  int pool_factor = 2;  // n; D = in_channels / n
};

// Attended features plus the intermediates needed for mask generation and
// for the affinity-row tests.
template <typename T>
struct CfaOutput {
  Tensor<T> attended;           // [B,C,H,W]
  Tensor<T> ca_map;             // [B,D,H,W]
  Tensor<T> pa_map;             // [B,D,H,W]
  Tensor<T> channel_affinity;   // [B,D,D], rows sum to 1
  Tensor<T> position_affinity;  // [B,N,N], rows sum to 1
};

// Compact foreground attention: channel max pooling down to D channels,
// shared Q/K/V (1x1 convs), a channel affinity and a position affinity over
// the shared features, and a 1x1 recover layer back to C channels. The two
// attention maps are fused per channel with trainable scalars that start at
// zero, so the module begins as a residual no-op.
template <typename T>
class Cfa : public Module<T> {
 public:
  Cfa(const CfaConfig& cfg, Rng& rng);
  CfaOutput<T> forward(const Tensor<T>& a, bool training) const;

  const CfaConfig& config() const { return cfg_; }

  Conv2d<T> q_conv, k_conv, v_conv;  // D -> D
  BatchNorm2d<T> q_bn, k_bn;
  BatchNorm2d<T> fuse_bn;   // over B' before recovery
  Conv2d<T> recover;        // D -> C
  Param<T>* gamma;          // CA weight, init 0
  Param<T>* phi;            // PA weight, init 0

 private:
  CfaConfig cfg_;
};

// Reference dual-attention baseline used for the cost comparison: two
// independent branches (position and channel), each with a 3x3 reduce conv,
// its own Q/K/V, one attention map gated by a zero-initialised scalar, and a
// 3x3 restore conv. Branch outputs are summed with the input.
template <typename T>
class PamCam : public Module<T> {
 public:
  PamCam(int in_channels, Rng& rng);
  Tensor<T> forward(const Tensor<T>& a, bool training) const;

  struct Branch : Module<T> {
    Branch(int c, int d, bool positional, Rng& rng);
    Tensor<T> forward(const Tensor<T>& a, bool training) const;
    Conv2d<T> reduce, q_conv, k_conv, v_conv, restore;
    BatchNorm2d<T> q_bn, k_bn;
    Param<T>* alpha;
    bool positional;
  };

  Branch position, channel;
  int in_channels;
};

}  // namespace ftn
