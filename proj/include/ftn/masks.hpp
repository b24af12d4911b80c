#pragma once

#include <string>

#include "ftn/tensor.hpp"

namespace ftn {

// Anisotropic Gaussian weighting centred on the person prior. Sigmas are
// fractions of the image extents; a negative centre means the default
// (H/2, W/2) in pixel coordinates. The mask is rescaled so the pixel nearest
// the centre is exactly 1.
struct GaussianMaskSpec {
  double sigma_y_frac = 0.35;
  double sigma_x_frac = 0.25;
  double center_y = -1.0;
  double center_x = -1.0;
};

template <typename T>
Tensor<T> gaussian_mask(int height, int width, const GaussianMaskSpec& spec);

// Spatialises a feature stack into a per-sample mask: mean over channels
// (or max with channel_max=true), min-max normalised to [0,1] (a constant
// map becomes 0.5), bilinearly upsampled with corner alignment. The result
// carries no gradient graph.
template <typename T>
Tensor<T> attention_to_mask(const Tensor<T>& feat, int out_h, int out_w,
                            bool channel_max = false);

// Reconstruction-target strategies, lettered (a)-(g):
//   a  NoCfaGmOnly          Gm-weighted input, CFA absent from the network
//   b  PlainInput           unweighted input
//   c  GmOnly               input * Gm
//   d  GmPam                input * Gm * PAm
//   e  GmCam                input * Gm * CAm
//   f  GmPamCamNoGradLoss   input * Gm * PAm * CAm, gradient loss disabled
//   g  GmPamCam             input * Gm * PAm * CAm
enum class ReconStrategy {
  NoCfaGmOnly,
  PlainInput,
  GmOnly,
  GmPam,
  GmCam,
  GmPamCamNoGradLoss,
  GmPamCam,
};

ReconStrategy parse_strategy(const std::string& s);
char strategy_letter(ReconStrategy s);
bool strategy_uses_cfa_masks(ReconStrategy s);
bool strategy_needs_pam(ReconStrategy s);
bool strategy_needs_cam(ReconStrategy s);
bool strategy_uses_gradient_loss(ReconStrategy s);

template <typename T>
struct MaskSet {
  Tensor<T> gm;   // [H,W]
  Tensor<T> pam;  // [B,H,W] or undefined
  Tensor<T> cam;  // [B,H,W] or undefined
};

// image * product of the masks the strategy selects, each broadcast over the
// colour channels. The result is detached: targets carry no gradient.
template <typename T>
Tensor<T> build_target(const Tensor<T>& image, ReconStrategy strategy,
                       const MaskSet<T>& masks);

}  // namespace ftn
