#include "ftn/tfdec.hpp"

#include <sstream>

namespace ftn {

template <typename T>
Msrb<T>::Msrb(int ch, Rng& rng)
    : conv3_a(ch, ch, 3, 1, 1, rng),
      conv5_a(ch, ch, 5, 1, 2, rng),
      conv3_b(2 * ch, ch, 3, 1, 1, rng),
      conv5_b(2 * ch, ch, 5, 1, 2, rng),
      fuse(2 * ch, ch, 1, 1, 0, rng) {
  this->add_child("conv3_a", &conv3_a);
  this->add_child("conv5_a", &conv5_a);
  this->add_child("conv3_b", &conv3_b);
  this->add_child("conv5_b", &conv5_b);
  this->add_child("fuse", &fuse);
}

template <typename T>
Tensor<T> Msrb<T>::forward(const Tensor<T>& x) const {
  Tensor<T> s1 = relu(conv3_a.forward(x));
  Tensor<T> s2 = relu(conv5_a.forward(x));
  Tensor<T> t1 = relu(conv3_b.forward(concat_channels(s1, s2)));
  Tensor<T> t2 = relu(conv5_b.forward(concat_channels(s2, s1)));
  return add(x, fuse.forward(concat_channels(t1, t2)));
}

template <typename T>
TfDec<T>::UpBlock::UpBlock(int hidden, int ratio_, Rng& rng)
    : expand(hidden, hidden * ratio_ * ratio_, 1, 1, 0, rng),
      conv(hidden, hidden, 3, 1, 1, rng),
      msrb(hidden, rng),
      ratio(ratio_) {
  this->add_child("expand", &expand);
  this->add_child("conv", &conv);
  this->add_child("msrb", &msrb);
}

template <typename T>
Tensor<T> TfDec<T>::UpBlock::forward(const Tensor<T>& x) const {
  Tensor<T> y = pixel_shuffle(expand.forward(x), ratio);
  return msrb.forward(relu(conv.forward(y)));
}

template <typename T>
TfDec<T>::TfDec(const DecoderConfig& cfg, Rng& rng)
    : head(cfg.in_channels, cfg.hidden_channels, 1, 1, 0, rng),
      tail(cfg.hidden_channels, cfg.out_channels, 3, 1, 1, rng),
      cfg_(cfg) {
  if (cfg.in_channels <= 0 || cfg.hidden_channels <= 0 ||
      cfg.num_up_blocks < 1 || cfg.up_ratio < 1)
    throw Error("TfDec: invalid decoder configuration");
  this->add_child("head", &head);
  for (int i = 0; i < cfg.num_up_blocks; ++i) {
    blocks.push_back(std::make_unique<UpBlock>(cfg.hidden_channels,
                                               cfg.up_ratio, rng));
    std::ostringstream os;
    os << "up" << i;
    this->add_child(os.str(), blocks.back().get());
  }
  this->add_child("tail", &tail);
}

template <typename T>
Tensor<T> TfDec<T>::forward(const Tensor<T>& f4) const {
  if (f4.rank() != 4 || f4.dim(1) != cfg_.in_channels) {
    std::ostringstream os;
    os << "TfDec: expected [B," << cfg_.in_channels << ",h,w], got "
       << shape_str(f4.shape());
    throw Error(os.str());
  }
  ++forward_count_;
  Tensor<T> y = head.forward(f4);
  for (const auto& b : blocks) y = b->forward(y);
  return sigmoid(tail.forward(y));
}

template class Msrb<float>;
template class Msrb<double>;
template class TfDec<float>;
template class TfDec<double>;

}  // namespace ftn
