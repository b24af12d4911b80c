#include "ftn/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace ftn {

namespace {
template <typename... Args>
std::string sstr(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

void validate_backbone(const BackboneConfig& bb) {
  if (bb.stages.size() != 5)
    throw Error(sstr("backbone: expected 5 stages, got ", bb.stages.size()));
  for (const auto& s : bb.stages)
    if (s.out_channels <= 0 || s.num_blocks < 1 || s.stride < 1)
      throw Error("backbone: invalid stage spec");
  if (bb.stages[4].stride != 1)
    throw Error("backbone: stage 5 must keep stride 1");
}

int up_blocks_for(int downsample, int ratio) {
  int blocks = 0, f = 1;
  while (f < downsample) {
    f *= ratio;
    ++blocks;
  }
  if (f != downsample)
    throw Error(sstr("decoder: stage-4 downsample ", downsample,
                     " is not a power of the up ratio ", ratio));
  return blocks;
}
}  // namespace

// ---------------------------------------------------------------------------
// blocks

template <typename T>
BasicBlock<T>::BasicBlock(int in_c, int out_c, int stride, Rng& rng)
    : conv1(in_c, out_c, 3, stride, 1, rng),
      conv2(out_c, out_c, 3, 1, 1, rng),
      bn1(out_c),
      bn2(out_c) {
  this->add_child("conv1", &conv1);
  this->add_child("bn1", &bn1);
  this->add_child("conv2", &conv2);
  this->add_child("bn2", &bn2);
  if (stride != 1 || in_c != out_c) {
    proj = std::make_unique<Conv2d<T>>(in_c, out_c, 1, stride, 0, rng);
    proj_bn = std::make_unique<BatchNorm2d<T>>(out_c);
    this->add_child("proj", proj.get());
    this->add_child("proj_bn", proj_bn.get());
  }
}

template <typename T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T>& x, bool training) const {
  Tensor<T> y = relu(bn1.forward(conv1.forward(x), training));
  y = bn2.forward(conv2.forward(y), training);
  Tensor<T> skip = proj ? proj_bn->forward(proj->forward(x), training) : x;
  return relu(add(y, skip));
}

template <typename T>
Bottleneck<T>::Bottleneck(int channels, Rng& rng)
    : reduce(channels, std::max(1, channels / 4), 1, 1, 0, rng),
      conv(std::max(1, channels / 4), std::max(1, channels / 4), 3, 1, 1, rng),
      expand(std::max(1, channels / 4), channels, 1, 1, 0, rng),
      bn1(std::max(1, channels / 4)),
      bn2(std::max(1, channels / 4)),
      bn3(channels) {
  this->add_child("reduce", &reduce);
  this->add_child("bn1", &bn1);
  this->add_child("conv", &conv);
  this->add_child("bn2", &bn2);
  this->add_child("expand", &expand);
  this->add_child("bn3", &bn3);
}

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, bool training) const {
  Tensor<T> y = relu(bn1.forward(reduce.forward(x), training));
  y = relu(bn2.forward(conv.forward(y), training));
  y = bn3.forward(expand.forward(y), training);
  return relu(add(y, x));
}

template <typename T>
BranchHead<T>::BranchHead(int in_channels, int embed_dim, int num_classes,
                          Rng& rng)
    : fc(in_channels, embed_dim, rng), classifier(embed_dim, num_classes, rng) {
  this->add_child("fc", &fc);
  this->add_child("classifier", &classifier);
}

template <typename T>
typename BranchHead<T>::Out BranchHead<T>::forward(
    const Tensor<T>& features) const {
  Tensor<T> pooled = add(global_avg_pool(features), global_max_pool(features));
  Tensor<T> e = fc.forward(pooled);
  return {e, classifier.forward(e)};
}

// ---------------------------------------------------------------------------
// FtnModel

template <typename T>
FtnModel<T>::FtnModel(const FtnConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate_backbone(cfg.backbone);
  int in_c = 3;
  for (int s = 0; s < 5; ++s) {
    const auto& spec = cfg.backbone.stages[static_cast<size_t>(s)];
    stages.emplace_back();
    for (int b = 0; b < spec.num_blocks; ++b) {
      const int stride = b == 0 ? spec.stride : 1;
      stages.back().push_back(
          std::make_unique<BasicBlock<T>>(in_c, spec.out_channels, stride, rng));
      this->add_child(sstr("stage", s + 1, ".block", b),
                      stages.back().back().get());
      in_c = spec.out_channels;
    }
  }
  const int c4 = cfg.backbone.stages[3].out_channels;
  const int c5 = cfg.backbone.stages[4].out_channels;

  if (cfg.with_cfa) {
    cfa = std::make_unique<Cfa<T>>(CfaConfig{c4, cfg.cfa_pool_factor}, rng);
    this->add_child("cfa", cfa.get());
  }
  local_block = std::make_unique<Bottleneck<T>>(c5, rng);
  this->add_child("local", local_block.get());

  if (cfg.with_cfa) {
    head_cfa = std::make_unique<BranchHead<T>>(c4, cfg.embed_dim,
                                               cfg.num_classes, rng);
    this->add_child("head_cfa", head_cfa.get());
  }
  head_global = std::make_unique<BranchHead<T>>(c5, cfg.embed_dim,
                                                cfg.num_classes, rng);
  this->add_child("head_global", head_global.get());
  head_local = std::make_unique<BranchHead<T>>(c5, cfg.embed_dim,
                                               cfg.num_classes, rng);
  this->add_child("head_local", head_local.get());

  if (cfg.with_decoder) {
    DecoderConfig dc;
    dc.in_channels = c4;
    dc.hidden_channels = cfg.decoder_hidden;
    dc.up_ratio = 2;
    dc.num_up_blocks = up_blocks_for(cfg.backbone.stage4_downsample(), 2);
    decoder = std::make_unique<TfDec<T>>(dc, rng);
    this->add_child("decoder", decoder.get());
  }

  gm_ = gaussian_mask<T>(cfg.image_h, cfg.image_w, cfg.gmask);
}

template <typename T>
Tensor<T> FtnModel<T>::run_stages(const Tensor<T>& x, int first, int last,
                                  bool training) const {
  Tensor<T> y = x;
  for (int s = first; s <= last; ++s)
    for (const auto& block : stages[static_cast<size_t>(s)])
      y = block->forward(y, training);
  return y;
}

template <typename T>
ReidOutput<T> FtnModel<T>::forward_reid(const Tensor<T>& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.image_h ||
      images.dim(3) != cfg_.image_w)
    throw Error(sstr("forward_reid: expected [B,3,", cfg_.image_h, ",",
                     cfg_.image_w, "], got ", shape_str(images.shape())));
  ReidOutput<T> out;
  out.f4 = run_stages(images, 0, 3, training);
  Tensor<T> global_feat = run_stages(out.f4, 4, 4, training);
  Tensor<T> local_feat = local_block->forward(global_feat, training);

  if (cfg_.with_cfa) {
    out.cfa = cfa->forward(out.f4, training);
    auto h = head_cfa->forward(out.cfa.attended);
    out.embeddings.push_back(h.embedding);
    out.logits.push_back(h.logits);
  }
  auto hg = head_global->forward(global_feat);
  out.embeddings.push_back(hg.embedding);
  out.logits.push_back(hg.logits);
  auto hl = head_local->forward(local_feat);
  out.embeddings.push_back(hl.embedding);
  out.logits.push_back(hl.logits);
  return out;
}

template <typename T>
ReconOutput<T> FtnModel<T>::forward_recon(const Tensor<T>& images,
                                          bool training) {
  if (!cfg_.with_decoder)
    throw Error("forward_recon: model was built without a decoder");
  ReconOutput<T> out;
  out.f4 = run_stages(images, 0, 3, training);
  out.masks.gm = gm_;
  Tensor<T> dec_in = out.f4;
  if (cfg_.with_cfa) {
    out.cfa = cfa->forward(out.f4, training);
    // Attention-derived masks are spatialised from detached maps: the
    // reconstruction target must not feed gradients back through them.
    out.masks.pam = attention_to_mask(out.cfa.pa_map.detach(), cfg_.image_h,
                                      cfg_.image_w, cfg_.mask_channel_max);
    out.masks.cam = attention_to_mask(out.cfa.ca_map.detach(), cfg_.image_h,
                                      cfg_.image_w, cfg_.mask_channel_max);
    if (cfg_.decode_from_cfa) dec_in = out.cfa.attended;
  }
  out.recon = decoder->forward(dec_in);
  return out;
}

template <typename T>
Tensor<T> FtnModel<T>::embed(const Tensor<T>& images) {
  ReidOutput<T> out = forward_reid(images, /*training=*/false);
  const idx B = images.dim(0);
  const idx dim = cfg_.embed_dim;
  const idx n = static_cast<idx>(out.embeddings.size());
  std::vector<T> data(static_cast<size_t>(B * n * dim));
  for (idx b = 0; b < B; ++b)
    for (idx h = 0; h < n; ++h) {
      auto src = out.embeddings[static_cast<size_t>(h)].data();
      std::copy_n(src.data() + b * dim, dim,
                  data.data() + b * n * dim + h * dim);
    }
  return Tensor<T>::from_data({B, n * dim}, std::move(data));
}

// ---------------------------------------------------------------------------
// parameter groups

template <typename T>
bool FtnModel<T>::is_backbone_param(const std::string& name) {
  return name.rfind("stage", 0) == 0;
}
template <typename T>
bool FtnModel<T>::is_classifier_param(const std::string& name) {
  return name.find(".classifier.") != std::string::npos;
}
template <typename T>
bool FtnModel<T>::is_cfa_param(const std::string& name) {
  return name.rfind("cfa.", 0) == 0;
}
template <typename T>
bool FtnModel<T>::is_decoder_param(const std::string& name) {
  return name.rfind("decoder.", 0) == 0;
}

template <typename T>
std::vector<Param<T>*> FtnModel<T>::reid_params() {
  std::vector<Param<T>*> out;
  for (auto* p : this->params())
    if (!is_decoder_param(p->name)) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Param<T>*> FtnModel<T>::recon_params() {
  std::vector<Param<T>*> out;
  for (auto* p : this->params()) {
    const bool stage14 = is_backbone_param(p->name) &&
                         p->name.rfind("stage5", 0) != 0;
    const bool cfa_on_path = cfg_.decode_from_cfa && is_cfa_param(p->name);
    if (stage14 || cfa_on_path || is_decoder_param(p->name)) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<Param<T>*> FtnModel<T>::warmup_params() {
  std::vector<Param<T>*> out;
  for (auto* p : this->params())
    if (is_classifier_param(p->name) || is_cfa_param(p->name))
      out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint state

namespace {
NamedTensor meta_scalar(const std::string& name, double v) {
  return {name, {1}, {static_cast<float>(v)}};
}
}  // namespace

template <typename T>
std::vector<NamedTensor> FtnModel<T>::state_tensors() {
  std::vector<NamedTensor> out;
  out.push_back(meta_scalar("meta.version", 1));
  out.push_back(meta_scalar("meta.num_classes", cfg_.num_classes));
  out.push_back(meta_scalar("meta.embed_dim", cfg_.embed_dim));
  out.push_back({"meta.image_hw",
                 {2},
                 {static_cast<float>(cfg_.image_h),
                  static_cast<float>(cfg_.image_w)}});
  out.push_back(meta_scalar("meta.cfa_pool", cfg_.cfa_pool_factor));
  out.push_back(meta_scalar("meta.with_cfa", cfg_.with_cfa ? 1 : 0));
  out.push_back(meta_scalar("meta.with_decoder", cfg_.with_decoder ? 1 : 0));
  out.push_back(meta_scalar("meta.decode_from_cfa", cfg_.decode_from_cfa ? 1 : 0));
  out.push_back(meta_scalar("meta.decoder_hidden", cfg_.decoder_hidden));
  out.push_back(meta_scalar("meta.mask_channel_max", cfg_.mask_channel_max ? 1 : 0));
  out.push_back({"meta.gaussian",
                 {4},
                 {static_cast<float>(cfg_.gmask.sigma_y_frac),
                  static_cast<float>(cfg_.gmask.sigma_x_frac),
                  static_cast<float>(cfg_.gmask.center_y),
                  static_cast<float>(cfg_.gmask.center_x)}});
  {
    NamedTensor bb{"meta.backbone", {5, 3}, {}};
    for (const auto& s : cfg_.backbone.stages) {
      bb.data.push_back(static_cast<float>(s.out_channels));
      bb.data.push_back(static_cast<float>(s.num_blocks));
      bb.data.push_back(static_cast<float>(s.stride));
    }
    out.push_back(std::move(bb));
  }
  for (auto& [name, tensor] : this->named_state()) {
    NamedTensor t;
    t.name = name;
    t.shape = tensor->shape();
    t.data.assign(tensor->data().begin(), tensor->data().end());
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
void FtnModel<T>::load_state_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto& [name, tensor] : this->named_state()) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw Error("checkpoint: missing tensor '" + name + "'");
    const NamedTensor& src = *it->second;
    if (src.shape != tensor->shape())
      throw Error(sstr("checkpoint: tensor '", name, "' has shape ",
                       shape_str(src.shape), ", model wants ",
                       shape_str(tensor->shape())));
    auto dst = tensor->data();
    for (size_t i = 0; i < src.data.size(); ++i)
      dst[i] = static_cast<T>(src.data[i]);
  }
}

FtnConfig config_from_state(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto get = [&](const std::string& name) -> const NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw Error("checkpoint: missing meta tensor '" + name + "'");
    return *it->second;
  };
  FtnConfig cfg;
  cfg.num_classes = static_cast<int>(get("meta.num_classes").data[0]);
  cfg.embed_dim = static_cast<int>(get("meta.embed_dim").data[0]);
  cfg.image_h = static_cast<int>(get("meta.image_hw").data[0]);
  cfg.image_w = static_cast<int>(get("meta.image_hw").data[1]);
  cfg.cfa_pool_factor = static_cast<int>(get("meta.cfa_pool").data[0]);
  cfg.with_cfa = get("meta.with_cfa").data[0] != 0;
  cfg.with_decoder = get("meta.with_decoder").data[0] != 0;
  cfg.decode_from_cfa = get("meta.decode_from_cfa").data[0] != 0;
  cfg.decoder_hidden = static_cast<int>(get("meta.decoder_hidden").data[0]);
  cfg.mask_channel_max = get("meta.mask_channel_max").data[0] != 0;
  const auto& g = get("meta.gaussian");
  cfg.gmask.sigma_y_frac = g.data[0];
  cfg.gmask.sigma_x_frac = g.data[1];
  cfg.gmask.center_y = g.data[2];
  cfg.gmask.center_x = g.data[3];
  const auto& bb = get("meta.backbone");
  cfg.backbone.stages.clear();
  for (size_t i = 0; i + 2 < bb.data.size(); i += 3)
    cfg.backbone.stages.push_back({static_cast<int>(bb.data[i]),
                                   static_cast<int>(bb.data[i + 1]),
                                   static_cast<int>(bb.data[i + 2])});
  return cfg;
}

template class BasicBlock<float>;
template class BasicBlock<double>;
template class Bottleneck<float>;
template class Bottleneck<double>;
template class BranchHead<float>;
template class BranchHead<double>;
template class FtnModel<float>;
template class FtnModel<double>;

}  // namespace ftn
