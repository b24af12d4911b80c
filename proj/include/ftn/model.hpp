#pragma once

#include <memory>
#include <vector>

#include "ftn/cfa.hpp"
#include "ftn/checkpoint.hpp"
#include "ftn/masks.hpp"
#include "ftn/nn.hpp"
#include "ftn/tfdec.hpp"

namespace ftn {

struct StageSpec {
  int out_channels = 0;
  int num_blocks = 1;
  int stride = 1;
};

struct BackboneConfig {
  // Exactly five stages; the last must keep stride 1 so the final feature
  // map stays large.
  std::vector<StageSpec> stages;

  static BackboneConfig desk_default() {
    return {{{8, 1, 2}, {16, 1, 2}, {32, 1, 2}, {64, 1, 2}, {128, 1, 1}}};
  }
  int stage4_downsample() const {
    int f = 1;
    for (int i = 0; i < 4 && i < static_cast<int>(stages.size()); ++i)
      f *= stages[static_cast<size_t>(i)].stride;
    return f;
  }
};

struct FtnConfig {
  BackboneConfig backbone = BackboneConfig::desk_default();
  int image_h = 64;
  int image_w = 32;
  int num_classes = 2;
  int embed_dim = 64;
  int cfa_pool_factor = 2;
  bool with_cfa = true;
  bool with_decoder = true;
  // Feed the CFA output instead of the raw stage-4 features into the decoder.
  bool decode_from_cfa = false;
  int decoder_hidden = 64;
  GaussianMaskSpec gmask;
  // Spatialise attention masks with a channel max instead of the mean.
  bool mask_channel_max = false;
};

// Basic two-conv residual block with a projected skip when the shape changes.
template <typename T>
class BasicBlock : public Module<T> {
 public:
  BasicBlock(int in_c, int out_c, int stride, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training) const;

  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
  std::unique_ptr<Conv2d<T>> proj;
  std::unique_ptr<BatchNorm2d<T>> proj_bn;
};

// 1x1 -> 3x3 -> 1x1 bottleneck at constant width (the local branch block).
template <typename T>
class Bottleneck : public Module<T> {
 public:
  Bottleneck(int channels, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training) const;

  Conv2d<T> reduce, conv, expand;
  BatchNorm2d<T> bn1, bn2, bn3;
};

// GAP + GMP summed, a fully connected embedding, and an identity classifier.
template <typename T>
class BranchHead : public Module<T> {
 public:
  BranchHead(int in_channels, int embed_dim, int num_classes, Rng& rng);
  struct Out {
    Tensor<T> embedding;  // [B, dim]
    Tensor<T> logits;     // [B, K]
  };
  Out forward(const Tensor<T>& features) const;

  Linear<T> fc;
  Linear<T> classifier;
};

template <typename T>
struct ReidOutput {
  std::vector<Tensor<T>> embeddings;  // per branch, [B,dim]
  std::vector<Tensor<T>> logits;      // per branch, [B,K]
  CfaOutput<T> cfa;                   // undefined tensors when CFA is off
  Tensor<T> f4;                       // stage-4 features
};

template <typename T>
struct ReconOutput {
  Tensor<T> recon;  // [B,3,H,W]
  MaskSet<T> masks;
  CfaOutput<T> cfa;
  Tensor<T> f4;
};

template <typename T>
class FtnModel : public Module<T> {
 public:
  FtnModel(const FtnConfig& cfg, Rng& rng);

  ReidOutput<T> forward_reid(const Tensor<T>& images, bool training);
  ReconOutput<T> forward_recon(const Tensor<T>& images, bool training);
  // Eval-mode concatenation of the branch embeddings; never touches the
  // decoder.
  Tensor<T> embed(const Tensor<T>& images);

  const FtnConfig& config() const { return cfg_; }
  int num_branches() const { return cfg_.with_cfa ? 3 : 2; }
  std::int64_t decoder_forward_count() const {
    return decoder ? decoder->forward_count() : 0;
  }

  // Parameter groups for the alternating schedule.
  std::vector<Param<T>*> reid_params();    // everything except the decoder
  std::vector<Param<T>*> recon_params();   // stages 1-4 + decoder (+ CFA when
                                           // it feeds the decoder)
  std::vector<Param<T>*> warmup_params();  // classifiers + CFA
  static bool is_backbone_param(const std::string& name);
  static bool is_classifier_param(const std::string& name);
  static bool is_cfa_param(const std::string& name);
  static bool is_decoder_param(const std::string& name);

  // Checkpoint state: params + batch-norm buffers + "meta.*" config tensors.
  std::vector<NamedTensor> state_tensors();
  void load_state_tensors(const std::vector<NamedTensor>& tensors);

  const Tensor<T>& gaussian() const { return gm_; }

  std::vector<std::vector<std::unique_ptr<BasicBlock<T>>>> stages;
  std::unique_ptr<Cfa<T>> cfa;
  std::unique_ptr<Bottleneck<T>> local_block;
  std::unique_ptr<BranchHead<T>> head_cfa, head_global, head_local;
  std::unique_ptr<TfDec<T>> decoder;

 private:
  Tensor<T> run_stages(const Tensor<T>& x, int first, int last,
                       bool training) const;

  FtnConfig cfg_;
  Tensor<T> gm_;
};

// Reconstructs the configuration encoded in a checkpoint's meta tensors.
FtnConfig config_from_state(const std::vector<NamedTensor>& tensors);

}  // namespace ftn
