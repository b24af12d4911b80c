#pragma once

#include <optional>
#include <vector>

#include "ftn/tensor.hpp"

namespace ftn {

// Per-pixel squared-difference maps, summed over the colour channels by
// default: gh is [B,H,W-1], gv is [B,H-1,W]. With sum_channels=false the
// channel axis is kept ([B,C,H,W-1] / [B,C,H-1,W]).
template <typename T>
struct GradientMaps {
  Tensor<T> gh, gv;
};

// Mean over batch of -log softmax(logits)[label]; max-subtraction stabilised.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

// Batch-hard triplet loss: per anchor, hardest positive (max same-id
// Euclidean distance) minus hardest negative (min different-id distance),
// hinged at margin and averaged over anchors. Distance ties resolve to the
// first index; the gradient at zero distance is treated as zero.
template <typename T>
Tensor<T> hard_triplet(const Tensor<T>& embeddings, const std::vector<int>& ids,
                       T margin);

template <typename T>
GradientMaps<T> image_gradients(const Tensor<T>& img, bool sum_channels = true);

// Mean absolute difference between the gradient maps of the two images,
// horizontal plus vertical, averaged over map entries so the weight is
// resolution independent.
template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& recon, const Tensor<T>& target,
                        bool sum_channels = true);

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b);

struct LossWeights {
  double ce = 0, triplet = 0, gradient = 0, l1 = 0;
};

template <typename T>
struct LossParts {
  std::optional<Tensor<T>> ce, triplet, gradient, l1;
};

// Weighted sum per the configured weights. A missing part is allowed only
// when its weight is zero.
template <typename T>
Tensor<T> total_loss(const LossParts<T>& parts, const LossWeights& w);

}  // namespace ftn
