#pragma once

#include <memory>
#include <vector>

#include "ftn/nn.hpp"

namespace ftn {

struct DecoderConfig {
  int in_channels = 0;
  int hidden_channels = 64;
  int num_up_blocks = 4;
  int up_ratio = 2;
  int out_channels = 3;

  // 16 with the defaults; must match the encoder's stage-4 downsample.
  int total_upsample() const {
    int f = 1;
    for (int i = 0; i < num_up_blocks; ++i) f *= up_ratio;
    return f;
  }
};

// Two-scale cross residual block: parallel 3x3/5x5 branches, cross
// concatenation, 1x1 fusion, residual add. Shape preserving.
template <typename T>
class Msrb : public Module<T> {
 public:
  Msrb(int channels, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;

  Conv2d<T> conv3_a, conv5_a;  // ch -> ch
  Conv2d<T> conv3_b, conv5_b;  // 2ch -> ch
  Conv2d<T> fuse;              // 2ch -> ch, 1x1
};

// Reconstruction decoder: 1x1 head to the hidden width, a stack of up blocks
// (1x1 channel expansion, PixelShuffle, 3x3 conv, ReLU, MSRB), and a 3x3
// tail to RGB squashed through a sigmoid so outputs live in [0,1].
template <typename T>
class TfDec : public Module<T> {
 public:
  TfDec(const DecoderConfig& cfg, Rng& rng);
  Tensor<T> forward(const Tensor<T>& f4) const;

  const DecoderConfig& config() const { return cfg_; }
  // Instrumentation: number of forward invocations, used to assert the
  // decoder stays untouched on the inference path.
  std::int64_t forward_count() const { return forward_count_; }

  struct UpBlock : Module<T> {
    UpBlock(int hidden, int ratio, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    Conv2d<T> expand;  // hidden -> hidden*r^2, 1x1
    Conv2d<T> conv;    // hidden -> hidden, 3x3
    Msrb<T> msrb;
    int ratio;
  };

  Conv2d<T> head;  // in -> hidden, 1x1
  std::vector<std::unique_ptr<UpBlock>> blocks;
  Conv2d<T> tail;  // hidden -> out, 3x3

 private:
  DecoderConfig cfg_;
  mutable std::int64_t forward_count_ = 0;
};

}  // namespace ftn
