#pragma once

#include <array>
#include <string>
#include <vector>

#include "ftn/rng.hpp"

namespace ftn {

// Synthetic Re-ID data: a striped person silhouette whose texture is a
// deterministic function of the identity, drawn over a background sampled
// independently of the identity. Foreground texture is therefore the only
// identity signal and the background a pure confounder.
struct SyntheticSpec {
  int num_ids = 8;
  int imgs_per_id = 8;
  int height = 64;
  int width = 32;
  int num_cameras = 2;
  // "overfit": every image is a training row. "disjoint": the first half of
  // the identities trains, the second half is split query/gallery.
  std::string split_mode = "overfit";
  double pos_jitter = 0.10;
  double scale_jitter = 0.10;
  double brightness_jitter = 0.10;

  std::string to_json() const;
  static SyntheticSpec from_json_text(const std::string& text);
};

struct ImageRecord {
  std::string file;       // relative to the dataset dir
  std::string mask_file;  // silhouette PGM, relative
  int id = 0;
  int cam = 0;
  std::string split;  // train | query | gallery
};

struct Dataset {
  int height = 0, width = 0;
  std::vector<ImageRecord> records;
  std::vector<std::vector<float>> images;       // planar 3*H*W, [0,1]
  std::vector<std::vector<float>> silhouettes;  // H*W, {0,1}

  std::vector<int> train_indices() const;
  std::vector<int> indices_with_split(const std::string& split) const;
  // Sorted unique train ids; CE classes are indices into this list.
  std::vector<int> train_ids() const;
};

void generate_dataset(const SyntheticSpec& spec, std::uint64_t seed,
                      const std::string& out_dir);
Dataset load_dataset(const std::string& dir);

namespace synth {

struct Style {
  std::array<double, 3> color_a, color_b;
  int stripe_width = 2;
  int orientation = 0;  // 0 horizontal, 1 vertical, 2 diagonal stripes
};

// Injective: the two stripe hues walk the golden-ratio sequence, which never
// repeats for any practical identity count.
Style style_for_id(int id);

struct Background {
  int kind = 0;  // 0 solid, 1 vertical gradient, 2 horizontal gradient, 3 noise
  std::array<double, 3> c0{}, c1{};
  std::uint64_t noise_seed = 0;
};

struct Jitter {
  double dy = 0, dx = 0;       // silhouette centre shift, pixels
  double scale = 1.0;          // silhouette scale factor
  double brightness = 1.0;     // whole-image multiplier
};

Background random_background(Rng& rng);
Jitter random_jitter(const SyntheticSpec& spec, Rng& rng);

// Renders one image (planar 3*H*W in [0,1]) and its silhouette mask (H*W,
// values 0 or 1).
void render(const Style& style, const Background& bg, const Jitter& jit,
            int height, int width, std::vector<float>& rgb,
            std::vector<float>& silhouette);

}  // namespace synth

}  // namespace ftn
