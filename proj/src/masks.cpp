#include "ftn/masks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ftn {

template <typename T>
Tensor<T> gaussian_mask(int height, int width, const GaussianMaskSpec& spec) {
  if (height < 1 || width < 1)
    throw Error("gaussian_mask: extents must be positive");
  const double sy = spec.sigma_y_frac * height;
  const double sx = spec.sigma_x_frac * width;
  if (sy <= 0.0 || sx <= 0.0)
    throw Error("gaussian_mask: sigma must be positive");
  const double cy = spec.center_y >= 0.0 ? spec.center_y : height / 2.0;
  const double cx = spec.center_x >= 0.0 ? spec.center_x : width / 2.0;

  std::vector<T> out(static_cast<size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dy = (y - cy) / sy;
      const double dx = (x - cx) / sx;
      out[static_cast<size_t>(y) * width + x] =
          static_cast<T>(std::exp(-0.5 * (dy * dy + dx * dx)));
    }
  }
  // Rescale so the pixel nearest the centre is exactly 1 (round half up,
  // clamped to the grid).
  const int py = std::min(height - 1, std::max(0, static_cast<int>(std::floor(cy + 0.5))));
  const int px = std::min(width - 1, std::max(0, static_cast<int>(std::floor(cx + 0.5))));
  const T peak = out[static_cast<size_t>(py) * width + px];
  for (auto& v : out) v /= peak;
  out[static_cast<size_t>(py) * width + px] = T(1);
  return Tensor<T>::from_data({height, width}, std::move(out));
}

template <typename T>
Tensor<T> attention_to_mask(const Tensor<T>& feat, int out_h, int out_w,
                            bool channel_max) {
  if (feat.rank() != 4) throw Error("attention_to_mask: expected [B,D,h,w]");
  const idx B = feat.dim(0), D = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
  if (out_h < h || out_w < w)
    throw Error("attention_to_mask: output size must not shrink the map");

  auto xd = feat.data();
  std::vector<T> out(static_cast<size_t>(B * out_h * out_w));
  std::vector<T> small(static_cast<size_t>(h * w));
  for (idx b = 0; b < B; ++b) {
    // Channel mean (or max).
    for (idx i = 0; i < h * w; ++i) {
      if (channel_max) {
        T m = xd[(b * D) * h * w + i];
        for (idx c = 1; c < D; ++c)
          m = std::max(m, xd[((b * D + c) * h * w) + i]);
        small[static_cast<size_t>(i)] = m;
      } else {
        T s = 0;
        for (idx c = 0; c < D; ++c) s += xd[((b * D + c) * h * w) + i];
        small[static_cast<size_t>(i)] = s / static_cast<T>(D);
      }
    }
    // Min-max normalise; a constant map becomes a neutral 0.5.
    T lo = small[0], hi = small[0];
    for (T v : small) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi > lo) {
      const T inv = T(1) / (hi - lo);
      for (auto& v : small) v = (v - lo) * inv;
    } else {
      for (auto& v : small) v = T(0.5);
    }
    // Bilinear upsample with corner alignment.
    T* q = out.data() + b * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const double fy = out_h > 1 ? static_cast<double>(oy) * (h - 1) / (out_h - 1)
                                  : 0.0;
      const idx y0 = static_cast<idx>(fy);
      const idx y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (int ox = 0; ox < out_w; ++ox) {
        const double fx =
            out_w > 1 ? static_cast<double>(ox) * (w - 1) / (out_w - 1) : 0.0;
        const idx x0 = static_cast<idx>(fx);
        const idx x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double v00 = small[static_cast<size_t>(y0 * w + x0)];
        const double v01 = small[static_cast<size_t>(y0 * w + x1)];
        const double v10 = small[static_cast<size_t>(y1 * w + x0)];
        const double v11 = small[static_cast<size_t>(y1 * w + x1)];
        const double top = v00 + (v01 - v00) * wx;
        const double bot = v10 + (v11 - v10) * wx;
        q[static_cast<idx>(oy) * out_w + ox] =
            static_cast<T>(top + (bot - top) * wy);
      }
    }
  }
  return Tensor<T>::from_data({B, out_h, out_w}, std::move(out));
}

ReconStrategy parse_strategy(const std::string& s) {
  if (s == "a" || s == "no-cfa-gm") return ReconStrategy::NoCfaGmOnly;
  if (s == "b" || s == "plain") return ReconStrategy::PlainInput;
  if (s == "c" || s == "gm") return ReconStrategy::GmOnly;
  if (s == "d" || s == "gm-pam") return ReconStrategy::GmPam;
  if (s == "e" || s == "gm-cam") return ReconStrategy::GmCam;
  if (s == "f" || s == "gm-pam-cam-nogradloss")
    return ReconStrategy::GmPamCamNoGradLoss;
  if (s == "g" || s == "gm-pam-cam") return ReconStrategy::GmPamCam;
  throw Error("unknown reconstruction strategy '" + s + "' (expected a..g)");
}

char strategy_letter(ReconStrategy s) {
  switch (s) {
    case ReconStrategy::NoCfaGmOnly: return 'a';
    case ReconStrategy::PlainInput: return 'b';
    case ReconStrategy::GmOnly: return 'c';
    case ReconStrategy::GmPam: return 'd';
    case ReconStrategy::GmCam: return 'e';
    case ReconStrategy::GmPamCamNoGradLoss: return 'f';
    case ReconStrategy::GmPamCam: return 'g';
  }
  return '?';
}

bool strategy_uses_cfa_masks(ReconStrategy s) {
  return strategy_needs_pam(s) || strategy_needs_cam(s);
}

bool strategy_needs_pam(ReconStrategy s) {
  return s == ReconStrategy::GmPam || s == ReconStrategy::GmPamCam ||
         s == ReconStrategy::GmPamCamNoGradLoss;
}

bool strategy_needs_cam(ReconStrategy s) {
  return s == ReconStrategy::GmCam || s == ReconStrategy::GmPamCam ||
         s == ReconStrategy::GmPamCamNoGradLoss;
}

bool strategy_uses_gradient_loss(ReconStrategy s) {
  return s != ReconStrategy::GmPamCamNoGradLoss;
}

namespace {
bool strategy_needs_gm(ReconStrategy s) {
  return s != ReconStrategy::PlainInput;
}
}  // namespace

template <typename T>
Tensor<T> build_target(const Tensor<T>& image, ReconStrategy strategy,
                       const MaskSet<T>& masks) {
  if (image.rank() != 4) throw Error("build_target: expected [B,3,H,W] image");
  const idx B = image.dim(0), C = image.dim(1), H = image.dim(2),
            W = image.dim(3);
  if (strategy == ReconStrategy::PlainInput) return image.detach();

  if (strategy_needs_gm(strategy)) {
    if (!masks.gm.defined() || masks.gm.shape() != std::vector<idx>{H, W})
      throw Error("build_target: strategy needs a Gaussian mask of the image size");
  }
  if (strategy_needs_pam(strategy) &&
      (!masks.pam.defined() || masks.pam.shape() != std::vector<idx>{B, H, W}))
    throw Error("build_target: strategy needs the position attention mask");
  if (strategy_needs_cam(strategy) &&
      (!masks.cam.defined() || masks.cam.shape() != std::vector<idx>{B, H, W}))
    throw Error("build_target: strategy needs the channel attention mask");

  std::vector<T> out(image.data().begin(), image.data().end());
  auto gm = masks.gm.data();
  const bool use_pam = strategy_needs_pam(strategy);
  const bool use_cam = strategy_needs_cam(strategy);
  for (idx b = 0; b < B; ++b) {
    for (idx c = 0; c < C; ++c) {
      T* q = out.data() + ((b * C + c) * H) * W;
      for (idx i = 0; i < H * W; ++i) {
        T m = gm[i];
        if (use_pam) m *= masks.pam.data()[b * H * W + i];
        if (use_cam) m *= masks.cam.data()[b * H * W + i];
        q[i] *= m;
      }
    }
  }
  return Tensor<T>::from_data(image.shape(), std::move(out));
}

#define FTN_INSTANTIATE_MASKS(T)                                             \
  template Tensor<T> gaussian_mask<T>(int, int, const GaussianMaskSpec&);    \
  template Tensor<T> attention_to_mask<T>(const Tensor<T>&, int, int, bool); \
  template Tensor<T> build_target<T>(const Tensor<T>&, ReconStrategy,        \
                                     const MaskSet<T>&);

FTN_INSTANTIATE_MASKS(float)
FTN_INSTANTIATE_MASKS(double)

}  // namespace ftn
